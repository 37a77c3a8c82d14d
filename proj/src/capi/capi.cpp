#include "lrsiam/lrsiam.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <sstream>
#include <string>

#include "lrsiam/blas.hpp"
#include "lrsiam/config.hpp"
#include "lrsiam/pipeline.hpp"
#include "lrsiam/tensor_io.hpp"
#include "lrsiam/trainer.hpp"

struct lrs_tensor {
  lrsiam::Tensor t;
};

struct lrs_model {
  lrsiam::Model model;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mu;
lrs_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_message(const std::string& msg) {
  std::lock_guard lock(g_log_mu);
  if (g_log_fn) g_log_fn(msg.c_str(), g_log_user);
}

lrs_status io_status(lrsiam::IoErrc c) {
  using lrsiam::IoErrc;
  switch (c) {
    case IoErrc::open_failed: return LRS_ERR_IO_OPEN;
    case IoErrc::bad_magic: return LRS_ERR_IO_BAD_MAGIC;
    case IoErrc::unsupported_version: return LRS_ERR_IO_UNSUPPORTED_VERSION;
    case IoErrc::bad_dtype: return LRS_ERR_IO_BAD_DTYPE;
    case IoErrc::truncated: return LRS_ERR_IO_TRUNCATED;
    case IoErrc::dim_overflow: return LRS_ERR_IO_DIM_OVERFLOW;
    case IoErrc::empty_dim: return LRS_ERR_IO_EMPTY_DIM;
    case IoErrc::non_finite: return LRS_ERR_IO_NON_FINITE;
    case IoErrc::write_failed: return LRS_ERR_IO_WRITE;
    case IoErrc::trailing_data: return LRS_ERR_IO_TRAILING_DATA;
  }
  return LRS_ERR_INTERNAL;
}

template <typename Fn>
lrs_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return LRS_OK;
  } catch (const lrsiam::IoError& e) {
    g_last_error = e.what();
    return io_status(e.code());
  } catch (const lrsiam::NumericError& e) {
    g_last_error = e.what();
    return LRS_ERR_NUMERIC;
  } catch (const lrsiam::MissingArtifact& e) {
    g_last_error = e.what();
    return LRS_ERR_DATA;
  } catch (const lrsiam::ManifestError& e) {
    g_last_error = e.what();
    return LRS_ERR_DATA;
  } catch (const lrsiam::PathCollision& e) {
    g_last_error = e.what();
    return LRS_ERR_USAGE;
  } catch (const std::invalid_argument& e) {  // includes ConfigError and ShapeError
    g_last_error = e.what();
    return LRS_ERR_USAGE;
  } catch (const std::out_of_range& e) {
    g_last_error = e.what();
    return LRS_ERR_USAGE;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return LRS_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LRS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LRS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return LRS_ERR_INTERNAL;
  }
}

lrs_status fail(lrs_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

lrsiam::RunConfig config_or_default(const char* path) {
  return path ? lrsiam::load_run_config(path) : lrsiam::RunConfig{};
}

std::vector<lrsiam::TrainMode> parse_modes(const std::string& spec) {
  using lrsiam::TrainMode;
  if (spec == "all") return {TrainMode::baseline, TrainMode::augment, TrainMode::multi_siamese};
  std::vector<TrainMode> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(lrsiam::parse_train_mode(item));
  }
  if (out.empty()) throw lrsiam::ConfigError("no training mode given");
  return out;
}

// Packs one video into a batch of size 1.
lrsiam::VideoBatch single_video(const lrsiam::Model& m, const lrs_tensor* rgb, const lrs_tensor* flow) {
  using namespace lrsiam;
  if (!rgb) throw std::invalid_argument("rgb tensor is required");
  const Shape& rs = rgb->t.shape();
  if (rs.size() != 4 || rs[1] != kLRHeight || rs[2] != kLRWidth || rs[3] != 3) {
    throw ShapeError("rgb must be [T, 12, 16, 3], got " + shape_str(rs));
  }
  LRVideo v;
  v.id = "input";
  v.frames = rgb->t;
  if (flow) {
    v.flow = flow->t;
  } else if (m.config().two_stream) {
    throw std::invalid_argument("a two-stream model needs a flow tensor");
  } else {
    v.flow = Tensor({rs[0], kLRHeight, kLRWidth, kFlowChannels});
  }
  if (rs[0] < m.config().min_frames()) {
    throw ShapeError("video has " + std::to_string(rs[0]) + " frames; the pyramid needs at least " +
                     std::to_string(m.config().min_frames()));
  }
  const LRVideo* ptr = &v;
  return pack_videos(std::span<const LRVideo* const>(&ptr, 1));
}

}  // namespace

extern "C" {

const char* lrs_version(void) { return "1.0.0"; }

const char* lrs_status_name(lrs_status s) {
  switch (s) {
    case LRS_OK: return "ok";
    case LRS_ERR_USAGE: return "usage error";
    case LRS_ERR_DATA: return "data error";
    case LRS_ERR_NUMERIC: return "numeric failure";
    case LRS_ERR_IO_OPEN: return "cannot open file";
    case LRS_ERR_IO_BAD_MAGIC: return "bad magic";
    case LRS_ERR_IO_UNSUPPORTED_VERSION: return "unsupported version";
    case LRS_ERR_IO_BAD_DTYPE: return "bad dtype";
    case LRS_ERR_IO_TRUNCATED: return "truncated payload";
    case LRS_ERR_IO_DIM_OVERFLOW: return "dimension overflow";
    case LRS_ERR_IO_EMPTY_DIM: return "empty dimension";
    case LRS_ERR_IO_NON_FINITE: return "non-finite value";
    case LRS_ERR_IO_WRITE: return "write failed";
    case LRS_ERR_IO_TRAILING_DATA: return "trailing data";
    case LRS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int lrs_status_exit_code(lrs_status s) {
  switch (s) {
    case LRS_OK: return 0;
    case LRS_ERR_USAGE: return 1;
    case LRS_ERR_NUMERIC: return 3;
    default: return 2;
  }
}

const char* lrs_last_error(void) { return g_last_error.c_str(); }

void lrs_set_log_callback(lrs_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mu);
  g_log_fn = fn;
  g_log_user = user;
}

void lrs_string_free(char* s) { std::free(s); }

lrs_status lrs_tensor_create(const size_t* dims, size_t rank, const float* data, lrs_tensor** out) {
  if (!out || (!dims && rank > 0)) return fail(LRS_ERR_USAGE, "lrs_tensor_create: null argument");
  *out = nullptr;
  return guarded([&] {
    lrsiam::Shape shape(dims, dims + rank);
    auto h = std::make_unique<lrs_tensor>(lrs_tensor{lrsiam::Tensor(shape)});
    if (data) std::memcpy(h->t.ptr(), data, h->t.size() * sizeof(float));
    *out = h.release();
  });
}

void lrs_tensor_free(lrs_tensor* t) { delete t; }
size_t lrs_tensor_rank(const lrs_tensor* t) { return t ? t->t.rank() : 0; }
size_t lrs_tensor_dim(const lrs_tensor* t, size_t axis) {
  return t && axis < t->t.rank() ? t->t.dim(axis) : 0;
}
size_t lrs_tensor_size(const lrs_tensor* t) { return t ? t->t.size() : 0; }
const float* lrs_tensor_data(const lrs_tensor* t) { return t ? t->t.ptr() : nullptr; }
float* lrs_tensor_mutable_data(lrs_tensor* t) { return t ? t->t.ptr() : nullptr; }

lrs_status lrs_tensor_write(const lrs_tensor* t, const char* path) {
  if (!t || !path) return fail(LRS_ERR_USAGE, "lrs_tensor_write: null argument");
  return guarded([&] { lrsiam::write_tensor(path, t->t); });
}

lrs_status lrs_tensor_read(const char* path, lrs_tensor** out) {
  if (!path || !out) return fail(LRS_ERR_USAGE, "lrs_tensor_read: null argument");
  *out = nullptr;
  return guarded([&] { *out = new lrs_tensor{lrsiam::read_tensor(path)}; });
}

lrs_status lrs_model_create(const char* config_path, uint64_t seed, lrs_model** out) {
  if (!out) return fail(LRS_ERR_USAGE, "lrs_model_create: null argument");
  *out = nullptr;
  return guarded([&] {
    const auto cfg = config_or_default(config_path);
    *out = new lrs_model{lrsiam::Model(cfg.model, seed)};
  });
}

lrs_status lrs_model_load(const char* checkpoint, lrs_model** out) {
  if (!checkpoint || !out) return fail(LRS_ERR_USAGE, "lrs_model_load: null argument");
  *out = nullptr;
  return guarded([&] {
    const auto cfg = lrsiam::load_run_config(lrsiam::find_run_config(checkpoint));
    *out = new lrs_model{lrsiam::load_model(checkpoint, cfg.model, log_message)};
  });
}

lrs_status lrs_model_save(const lrs_model* m, const char* checkpoint) {
  if (!m || !checkpoint) return fail(LRS_ERR_USAGE, "lrs_model_save: null argument");
  return guarded([&] { lrsiam::save_model(checkpoint, m->model); });
}

void lrs_model_free(lrs_model* m) { delete m; }
size_t lrs_model_embed_dim(const lrs_model* m) { return m ? m->model.config().embed_dim : 0; }
size_t lrs_model_num_classes(const lrs_model* m) { return m ? m->model.config().num_classes : 0; }

lrs_status lrs_model_embed(const lrs_model* m, const lrs_tensor* rgb, const lrs_tensor* flow,
                           lrs_tensor** out) {
  if (!m || !out) return fail(LRS_ERR_USAGE, "lrs_model_embed: null argument");
  *out = nullptr;
  return guarded([&] {
    lrsiam::NoGradGuard guard;
    auto batch = single_video(m->model, rgb, flow);
    lrsiam::Tensor e = m->model.embed(batch).value();
    *out = new lrs_tensor{e.reshaped({m->model.config().embed_dim})};
  });
}

lrs_status lrs_model_classify(const lrs_model* m, const lrs_tensor* rgb, const lrs_tensor* flow,
                              lrs_tensor** out) {
  if (!m || !out) return fail(LRS_ERR_USAGE, "lrs_model_classify: null argument");
  *out = nullptr;
  return guarded([&] {
    lrsiam::NoGradGuard guard;
    auto batch = single_video(m->model, rgb, flow);
    lrsiam::Tensor e = m->model.embed(batch).value();
    *out = new lrs_tensor{m->model.classify(e)};
  });
}

lrs_status lrs_gen_toy(const char* config_path, const char* out_dir, int force) {
  if (!out_dir) return fail(LRS_ERR_USAGE, "lrs_gen_toy: out_dir is required");
  return guarded([&] { lrsiam::cmd_gen_toy(config_or_default(config_path), out_dir, force != 0, log_message); });
}

lrs_status lrs_prepare_lr(const char* config_path, const char* hr_manifest, const char* out_dir,
                          size_t jobs) {
  if (!hr_manifest || !out_dir) return fail(LRS_ERR_USAGE, "lrs_prepare_lr: manifest and out_dir are required");
  return guarded([&] {
    lrsiam::cmd_prepare_lr(config_or_default(config_path), hr_manifest, out_dir, jobs, log_message);
  });
}

lrs_status lrs_flow(const char* config_path, const char* lr_manifest, const char* out_dir, size_t jobs) {
  if (!lr_manifest || !out_dir) return fail(LRS_ERR_USAGE, "lrs_flow: manifest and out_dir are required");
  return guarded([&] {
    lrsiam::cmd_flow(config_or_default(config_path).flow, lr_manifest, out_dir, jobs, log_message);
  });
}

lrs_status lrs_train(const char* config_path, const char* modes, const char* stream, const char* out_dir,
                     char** summary_json) {
  if (!config_path || !out_dir) return fail(LRS_ERR_USAGE, "lrs_train: config and out_dir are required");
  if (summary_json) *summary_json = nullptr;
  return guarded([&] {
    auto cfg = lrsiam::load_run_config(config_path);
    if (stream) {
      const std::string s = stream;
      if (s == "one-stream") {
        cfg.model.two_stream = false;
      } else if (s == "two-stream") {
        cfg.model.two_stream = true;
      } else {
        throw lrsiam::ConfigError("unknown stream '" + s + "' (expected one-stream or two-stream)");
      }
    }
    const auto list = modes ? parse_modes(modes) : std::vector<lrsiam::TrainMode>{cfg.train.mode};
    const std::string text = lrsiam::cmd_train(cfg, list, out_dir, log_message);
    if (summary_json) *summary_json = dup_string(text);
  });
}

lrs_status lrs_eval(const char* checkpoint, const char* split, char** metrics_json) {
  if (!checkpoint || !split) return fail(LRS_ERR_USAGE, "lrs_eval: checkpoint and split are required");
  if (metrics_json) *metrics_json = nullptr;
  return guarded([&] {
    const std::string text = lrsiam::cmd_eval(checkpoint, split, log_message);
    if (metrics_json) *metrics_json = dup_string(text);
  });
}

lrs_status lrs_embed(const char* checkpoint, const char* manifest, const char* out_dir, const char* split,
                     char** ratio_json) {
  if (!checkpoint || !manifest || !out_dir) {
    return fail(LRS_ERR_USAGE, "lrs_embed: checkpoint, manifest and out_dir are required");
  }
  if (ratio_json) *ratio_json = nullptr;
  return guarded([&] {
    std::optional<std::string> sp;
    if (split) sp = split;
    const std::string text = lrsiam::cmd_embed(checkpoint, manifest, out_dir, sp, log_message);
    if (ratio_json) *ratio_json = dup_string(text);
  });
}

lrs_status lrs_gradcheck(size_t seeds, char** report_json) {
  if (report_json) *report_json = nullptr;
  bool passed = false;
  const lrs_status st = guarded([&] {
    lrsiam::GradcheckSuiteOptions opt;
    if (seeds > 0) opt.seeds = seeds;
    const std::string text = lrsiam::cmd_gradcheck(opt, passed, log_message);
    if (report_json) *report_json = dup_string(text);
  });
  if (st != LRS_OK) return st;
  if (!passed) return fail(LRS_ERR_NUMERIC, "gradient check failed for at least one case");
  return LRS_OK;
}

}  // extern "C"
