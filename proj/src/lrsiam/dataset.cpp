#include "lrsiam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "lrsiam/tensor_io.hpp"

namespace lrsiam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

template <typename V>
V field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ManifestError("manifest line " + std::to_string(line) + ": missing field '" + key + "'");
  }
  try {
    return it->template get<V>();
  } catch (const json::exception&) {
    throw ManifestError("manifest line " + std::to_string(line) + ": field '" + key +
                        "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_to(const fs::path& base, const fs::path& p) {
  std::error_code ec;
  fs::path rel = fs::relative(p, base, ec);
  return ec || rel.empty() ? p.string() : rel.generic_string();
}

}  // namespace

std::string to_string(ManifestKind k) { return k == ManifestKind::hr ? "hr" : "lr"; }

const VideoRecord& DatasetManifest::find(const std::string& id) const {
  for (const auto& v : videos) {
    if (v.id == id) return v;
  }
  throw ManifestError("manifest has no video '" + id + "'");
}

std::vector<std::pair<std::string, std::size_t>> DatasetManifest::sources() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::set<std::string> seen;
  for (const auto& v : videos) {
    if (seen.insert(v.source()).second) out.emplace_back(v.source(), v.label);
  }
  return out;
}

const SplitDef& DatasetManifest::split(const std::string& n) const {
  for (const auto& s : splits) {
    if (s.name == n) return s;
  }
  throw ManifestError("manifest has no split '" + n + "'");
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  validate_manifest(m);
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  json header = {{"type", "header"},
                 {"version", kManifestVersion},
                 {"dataset", m.name},
                 {"kind", to_string(m.kind)},
                 {"classes", m.class_names}};
  out << header.dump() << '\n';
  for (const auto& v : m.videos) {
    json r = {{"type", "video"},   {"id", v.id},         {"path", relative_to(base, v.path)},
              {"label", v.label},  {"frames", v.frames}, {"height", v.height},
              {"width", v.width}};
    if (!v.source_id.empty()) r["source_id"] = v.source_id;
    if (v.transform_index) r["transform_index"] = *v.transform_index;
    if (v.flow_path) r["flow_path"] = relative_to(base, *v.flow_path);
    out << r.dump() << '\n';
  }
  for (const auto& s : m.splits) {
    json r = {{"type", "split"}, {"name", s.name}, {"train", s.train}, {"val", s.val},
              {"test", s.test}};
    out << r.dump() << '\n';
  }
  if (!out) throw ManifestError("error writing manifest " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  DatasetManifest m;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto type = field<std::string>(j, "type", lineno);
    if (type == "header") {
      if (have_header) throw ManifestError("manifest: duplicate header");
      const int version = field<int>(j, "version", lineno);
      if (version > kManifestVersion) {
        throw ManifestError("manifest version " + std::to_string(version) +
                            " is newer than supported version " + std::to_string(kManifestVersion));
      }
      m.name = field<std::string>(j, "dataset", lineno);
      const auto kind = field<std::string>(j, "kind", lineno);
      if (kind != "hr" && kind != "lr") throw ManifestError("manifest: unknown kind '" + kind + "'");
      m.kind = kind == "hr" ? ManifestKind::hr : ManifestKind::lr;
      m.class_names = field<std::vector<std::string>>(j, "classes", lineno);
      have_header = true;
      continue;
    }
    if (!have_header) throw ManifestError("manifest: first record must be the header");
    if (type == "video") {
      VideoRecord v;
      v.id = field<std::string>(j, "id", lineno);
      v.path = resolve(base, field<std::string>(j, "path", lineno));
      v.label = field<std::size_t>(j, "label", lineno);
      v.frames = field<std::size_t>(j, "frames", lineno);
      v.height = field<std::size_t>(j, "height", lineno);
      v.width = field<std::size_t>(j, "width", lineno);
      if (j.contains("source_id")) v.source_id = field<std::string>(j, "source_id", lineno);
      if (j.contains("transform_index")) v.transform_index = field<std::size_t>(j, "transform_index", lineno);
      if (j.contains("flow_path")) v.flow_path = resolve(base, field<std::string>(j, "flow_path", lineno));
      m.videos.push_back(std::move(v));
    } else if (type == "split") {
      SplitDef s;
      s.name = field<std::string>(j, "name", lineno);
      s.train = field<std::vector<std::string>>(j, "train", lineno);
      s.val = field<std::vector<std::string>>(j, "val", lineno);
      s.test = field<std::vector<std::string>>(j, "test", lineno);
      m.splits.push_back(std::move(s));
    } else {
      throw ManifestError("manifest line " + std::to_string(lineno) + ": unknown record type '" +
                          type + "'");
    }
  }
  if (!have_header) throw ManifestError("manifest " + path.string() + " is empty");
  validate_manifest(m);
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.class_names.empty()) throw ManifestError("manifest lists no classes");
  std::set<std::string> ids;
  std::map<std::string, std::size_t> source_label;
  for (const auto& v : m.videos) {
    if (v.id.empty()) throw ManifestError("manifest: empty video id");
    if (!ids.insert(v.id).second) throw ManifestError("manifest: duplicate video id '" + v.id + "'");
    if (v.label >= m.num_classes()) {
      throw ManifestError("manifest: video '" + v.id + "' has label " + std::to_string(v.label) +
                          " but only " + std::to_string(m.num_classes()) + " classes");
    }
    if (m.kind == ManifestKind::lr && (v.source_id.empty() || !v.transform_index)) {
      throw ManifestError("manifest: LR video '" + v.id + "' lacks source_id/transform_index");
    }
    auto [it, fresh] = source_label.emplace(v.source(), v.label);
    if (!fresh && it->second != v.label) {
      throw ManifestError("manifest: source '" + v.source() + "' carries two different labels");
    }
  }
  std::set<std::string> split_names;
  for (const auto& s : m.splits) {
    if (!split_names.insert(s.name).second) throw ManifestError("manifest: duplicate split '" + s.name + "'");
    std::set<std::string> members;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& id : *part) {
        if (!source_label.count(id)) {
          throw ManifestError("split '" + s.name + "' references unknown source '" + id + "'");
        }
        if (!members.insert(id).second) {
          throw ManifestError("split '" + s.name + "' lists source '" + id + "' twice");
        }
      }
    }
  }
}

void verify_manifest_files(const DatasetManifest& m) {
  for (const auto& v : m.videos) {
    const Tensor t = read_tensor(v.path);
    const Shape expect{v.frames, v.height, v.width, 3};
    if (t.shape() != expect) {
      throw ManifestError("video '" + v.id + "' has shape " + shape_str(t.shape()) +
                          ", manifest declares " + shape_str(expect));
    }
    if (v.flow_path) {
      const Tensor f = read_tensor(*v.flow_path);
      const Shape fexpect{v.frames, v.height, v.width, kFlowChannels};
      if (f.shape() != fexpect) {
        throw ManifestError("flow of '" + v.id + "' has shape " + shape_str(f.shape()) +
                            ", expected " + shape_str(fexpect));
      }
    }
  }
}

namespace {

std::map<std::size_t, std::vector<std::string>> by_class(
    const std::vector<std::pair<std::string, std::size_t>>& sources) {
  std::map<std::size_t, std::vector<std::string>> out;
  for (const auto& [id, label] : sources) out[label].push_back(id);
  return out;
}

}  // namespace

std::vector<SplitDef> make_splits(const DatasetManifest& m, const SplitOptions& opt,
                                  std::uint64_t seed) {
  const auto classes = by_class(m.sources());
  if (classes.empty()) throw ManifestError("make_splits: manifest has no videos");
  std::vector<SplitDef> out;
  if (opt.scheme == SplitScheme::random_half) {
    if (opt.count == 0) throw std::invalid_argument("make_splits: count must be >= 1");
    for (const auto& [label, ids] : classes) {
      if (ids.size() < 2) {
        throw ManifestError("make_splits: class " + std::to_string(label) +
                            " has fewer than 2 videos; cannot split in half");
      }
    }
    for (std::size_t s = 0; s < opt.count; ++s) {
      SplitDef def;
      def.name = "half-" + std::to_string(s);
      for (const auto& [label, ids] : classes) {
        std::vector<std::string> shuffled = ids;
        Rng rng(substream_seed(seed, "split-half", s * 1000003 + label));
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const std::size_t half = shuffled.size() / 2;
        def.train.insert(def.train.end(), shuffled.begin(), shuffled.begin() + long(half));
        def.test.insert(def.test.end(), shuffled.begin() + long(half), shuffled.end());
      }
      out.push_back(std::move(def));
    }
    return out;
  }
  if (!(opt.val_fraction >= 0.0) || !(opt.test_fraction > 0.0) ||
      opt.val_fraction + opt.test_fraction >= 1.0) {
    throw std::invalid_argument("make_splits: fractions must satisfy 0 <= val, 0 < test, val + test < 1");
  }
  SplitDef def;
  def.name = "fixed";
  for (const auto& [label, ids] : classes) {
    std::vector<std::string> shuffled = ids;
    Rng rng(substream_seed(seed, "split-fixed", label));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t n = shuffled.size();
    const auto n_test = std::size_t(std::llround(opt.test_fraction * double(n)));
    const auto n_val = std::size_t(std::llround(opt.val_fraction * double(n)));
    if (n_test + n_val >= n) {
      throw ManifestError("make_splits: class " + std::to_string(label) + " has too few videos (" +
                          std::to_string(n) + ") for the requested fractions");
    }
    def.test.insert(def.test.end(), shuffled.begin(), shuffled.begin() + long(n_test));
    def.val.insert(def.val.end(), shuffled.begin() + long(n_test),
                   shuffled.begin() + long(n_test + n_val));
    def.train.insert(def.train.end(), shuffled.begin() + long(n_test + n_val), shuffled.end());
  }
  out.push_back(std::move(def));
  return out;
}

void carve_validation(const DatasetManifest& m, SplitDef& split, double fraction,
                      std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  }
  if (fraction == 0.0) return;
  std::map<std::string, std::size_t> label;
  for (const auto& [id, l] : m.sources()) label[id] = l;
  std::map<std::size_t, std::vector<std::string>> classes;
  for (const auto& id : split.train) classes[label.at(id)].push_back(id);
  std::set<std::string> moved;
  for (auto& [l, ids] : classes) {
    if (ids.size() < 2) continue;
    Rng rng(substream_seed(seed, "validation", l));
    std::shuffle(ids.begin(), ids.end(), rng);
    auto k = std::size_t(std::llround(fraction * double(ids.size())));
    k = std::clamp<std::size_t>(k, 1, ids.size() - 1);
    for (std::size_t i = 0; i < k; ++i) moved.insert(ids[i]);
  }
  std::vector<std::string> train;
  for (const auto& id : split.train) {
    if (moved.count(id)) {
      split.val.push_back(id);
    } else {
      train.push_back(id);
    }
  }
  split.train = std::move(train);
}

HRVideo load_hr_video(const VideoRecord& rec) {
  HRVideo v;
  v.id = rec.id;
  v.label = rec.label;
  v.frames = read_tensor(rec.path);
  if (v.frames.shape() != Shape{rec.frames, rec.height, rec.width, 3}) {
    throw ManifestError("video '" + rec.id + "' has shape " + shape_str(v.frames.shape()) +
                        " but the manifest declares " + std::to_string(rec.frames) + "x" +
                        std::to_string(rec.height) + "x" + std::to_string(rec.width) + "x3");
  }
  return v;
}

LRVideo load_lr_video(const VideoRecord& rec, bool with_flow) {
  LRVideo v;
  v.id = rec.id;
  v.source_id = rec.source();
  v.transform_index = rec.transform_index.value_or(0);
  v.label = rec.label;
  v.frames = read_tensor(rec.path);
  if (v.frames.shape() != Shape{rec.frames, kLRHeight, kLRWidth, 3}) {
    throw ManifestError("LR video '" + rec.id + "' has shape " + shape_str(v.frames.shape()));
  }
  if (with_flow) {
    if (!rec.flow_path) {
      throw ManifestError("LR video '" + rec.id + "' has no flow stacks; run the flow stage first");
    }
    v.flow = read_tensor(*rec.flow_path);
    if (v.flow->shape() != Shape{rec.frames, kLRHeight, kLRWidth, kFlowChannels}) {
      throw ManifestError("flow of '" + rec.id + "' has shape " + shape_str(v.flow->shape()));
    }
  }
  return v;
}

}  // namespace lrsiam
