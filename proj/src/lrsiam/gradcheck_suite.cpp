#include "lrsiam/gradcheck_suite.hpp"

#include <chrono>

#include "lrsiam/gradcheck.hpp"
#include "lrsiam/loss.hpp"
#include "lrsiam/model.hpp"
#include "lrsiam/rng.hpp"

namespace lrsiam {

namespace {

using D = double;
using VarD = Var<D>;
using Inputs = std::span<const VarD>;
using Graph = std::function<VarD(Inputs)>;

TensorD uniform(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = uniform_real(rng, lo, hi);
  return t;
}

// Uniform in [-1, 1] with no value closer than `gap` to zero, so ReLU kinks
// stay out of the finite-difference stencil.
TensorD away_from_zero(Rng& rng, Shape shape, double gap = 0.05) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = uniform_real(rng, gap, 1.0);
    v = uniform_index(rng, 2) ? m : -m;
  }
  return t;
}

// Projects an arbitrary graph output to a scalar through fixed random
// weights, so every output element contributes a distinct gradient.
VarD project(const VarD& y, std::uint64_t seed) {
  Rng rng(substream_seed(seed, "projection"));
  VarD w(uniform(rng, y.shape()));
  return sum(mul(y, w));
}

struct Case {
  std::string name;
  std::function<GradcheckReport(std::uint64_t seed, const GradcheckOptions&)> run;
};

Case simple(std::string name, std::function<std::vector<TensorD>(Rng&)> make,
            std::function<VarD(Inputs)> body, bool project_output = true) {
  auto run = [make, body, project_output](std::uint64_t seed, const GradcheckOptions& opt) {
    Rng rng(substream_seed(seed, "inputs"));
    auto inputs = make(rng);
    Graph g = [&](Inputs v) {
      VarD y = body(v);
      return project_output ? project(y, seed) : y;
    };
    return gradcheck<D>(g, inputs, opt);
  };
  return {std::move(name), run};
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.num_classes = 3;
  c.conv1 = 2;
  c.conv2 = 3;
  c.conv3 = 2;
  c.feature_dim = 3;
  c.embed_dim = 5;
  c.pyramid_level = 4;
  c.two_stream = true;
  return c;
}

std::vector<Case> all_cases(const GradcheckSuiteOptions& suite) {
  std::vector<Case> cs;
  cs.push_back(simple("add", [](Rng& r) { return std::vector{uniform(r, {3, 4}), uniform(r, {3, 4})}; },
                      [](Inputs v) { return add(v[0], v[1]); }));
  cs.push_back(simple("sub", [](Rng& r) { return std::vector{uniform(r, {5}), uniform(r, {5})}; },
                      [](Inputs v) { return sub(v[0], v[1]); }));
  cs.push_back(simple("mul", [](Rng& r) { return std::vector{uniform(r, {2, 3}), uniform(r, {2, 3})}; },
                      [](Inputs v) { return mul(v[0], v[1]); }));
  cs.push_back(simple("scale", [](Rng& r) { return std::vector{uniform(r, {4})}; },
                      [](Inputs v) { return scale(v[0], D(-1.7)); }));
  cs.push_back(simple("add_scalar", [](Rng& r) { return std::vector{uniform(r, {4})}; },
                      [](Inputs v) { return add_scalar(v[0], D(0.3)); }));
  cs.push_back(simple("relu", [](Rng& r) { return std::vector{away_from_zero(r, {3, 5})}; },
                      [](Inputs v) { return relu(v[0]); }));
  cs.push_back(simple("sqrt", [](Rng& r) { return std::vector{uniform(r, {6}, 0.2, 3.0)}; },
                      [](Inputs v) { return sqrt(v[0]); }));
  cs.push_back(simple("sum", [](Rng& r) { return std::vector{uniform(r, {2, 3, 2})}; },
                      [](Inputs v) { return sum(v[0]); }, false));
  cs.push_back(simple("sum_squares", [](Rng& r) { return std::vector{uniform(r, {7})}; },
                      [](Inputs v) { return sum_squares(v[0]); }, false));
  cs.push_back(simple("add_n",
                      [](Rng& r) { return std::vector{uniform(r, {1}), uniform(r, {1}), uniform(r, {1})}; },
                      [](Inputs v) { return add_n<D>(v); }, false));
  cs.push_back(simple("reshape", [](Rng& r) { return std::vector{uniform(r, {2, 6})}; },
                      [](Inputs v) { return reshape(v[0], {3, 4}); }));
  cs.push_back(simple("slice", [](Rng& r) { return std::vector{uniform(r, {5, 3})}; },
                      [](Inputs v) { return slice(v[0], 1, 4); }));
  cs.push_back(simple("concat_axis0",
                      [](Rng& r) { return std::vector{uniform(r, {2, 3}), uniform(r, {1, 3})}; },
                      [](Inputs v) { return concat<D>(v, 0); }));
  cs.push_back(simple("concat_axis1",
                      [](Rng& r) { return std::vector{uniform(r, {2, 3}), uniform(r, {2, 2})}; },
                      [](Inputs v) { return concat<D>(v, 1); }));
  cs.push_back(simple("temporal_max",
                      [](Rng& r) { return std::vector{uniform(r, {4}), uniform(r, {4}), uniform(r, {4})}; },
                      [](Inputs v) { return temporal_max<D>(v); }));
  cs.push_back(simple("interval_max", [](Rng& r) { return std::vector{uniform(r, {7, 3})}; },
                      [](Inputs v) { return interval_max(v[0], 2, 6); }));
  cs.push_back(simple("max_pool2d", [](Rng& r) { return std::vector{uniform(r, {4, 6, 2})}; },
                      [](Inputs v) { return max_pool2d(v[0], 2, 2); }));
  cs.push_back(simple("max_pool2d_batched", [](Rng& r) { return std::vector{uniform(r, {2, 4, 4, 3})}; },
                      [](Inputs v) { return max_pool2d(v[0], 2, 2); }));
  cs.push_back(simple("conv2d",
                      [](Rng& r) {
                        return std::vector{uniform(r, {5, 4, 2}), uniform(r, {3, 3, 2, 3}), uniform(r, {3})};
                      },
                      [](Inputs v) { return conv2d(v[0], v[1], v[2], 1, 1); }));
  cs.push_back(simple("conv2d_strided",
                      [](Rng& r) {
                        return std::vector{uniform(r, {2, 6, 5, 2}), uniform(r, {3, 3, 2, 2}), uniform(r, {2})};
                      },
                      [](Inputs v) { return conv2d(v[0], v[1], v[2], 2, 0); }));
  cs.push_back(simple("fully_connected",
                      [](Rng& r) { return std::vector{uniform(r, {4}), uniform(r, {4, 3}), uniform(r, {3})}; },
                      [](Inputs v) { return fully_connected(v[0], v[1], v[2]); }));
  cs.push_back(simple("fully_connected_batched",
                      [](Rng& r) { return std::vector{uniform(r, {3, 4}), uniform(r, {4, 2}), uniform(r, {2})}; },
                      [](Inputs v) { return fully_connected(v[0], v[1], v[2]); }));
  cs.push_back({"softmax_cross_entropy", [](std::uint64_t seed, const GradcheckOptions& opt) {
                  Rng rng(substream_seed(seed, "inputs"));
                  std::vector<TensorD> in{uniform(rng, {3, 5}, -2.0, 2.0)};
                  std::vector<std::size_t> labels{uniform_index(rng, 5), uniform_index(rng, 5), uniform_index(rng, 5)};
                  Graph g = [labels](Inputs v) { return softmax_cross_entropy<D>(v[0], labels); };
                  return gradcheck<D>(g, in, opt);
                }});
  cs.push_back(simple("contrastive_positive", [](Rng& r) { return std::vector{uniform(r, {6}), uniform(r, {6})}; },
                      [](Inputs v) { return contrastive_pair(v[0], v[1], PairLabel::positive, 1.0); }, false));
  cs.push_back(simple("contrastive_negative_active",
                      [](Rng& r) { return std::vector{uniform(r, {6}), uniform(r, {6})}; },
                      [](Inputs v) { return contrastive_pair(v[0], v[1], PairLabel::negative, 10.0); }, false));
  cs.push_back(simple("contrastive_negative_inactive",
                      [](Rng& r) { return std::vector{uniform(r, {6}), uniform(r, {6}, 3.0, 4.0)}; },
                      [](Inputs v) { return contrastive_pair(v[0], v[1], PairLabel::negative, 0.5); }, false));
  cs.push_back(simple("multi_siamese_hinge_active",
                      [](Rng& r) { return std::vector{uniform(r, {4, 5}), uniform(r, {4, 5})}; },
                      [](Inputs v) { return multi_siamese_loss(v[0], v[1], 3.0); }, false));
  cs.push_back(simple("multi_siamese_hinge_inactive",
                      [](Rng& r) { return std::vector{uniform(r, {3, 5}), uniform(r, {3, 5}, 4.0, 5.0)}; },
                      [](Inputs v) { return multi_siamese_loss(v[0], v[1], 0.1); }, false));
  cs.push_back({"combined_loss", [](std::uint64_t seed, const GradcheckOptions& opt) {
                  Rng rng(substream_seed(seed, "inputs"));
                  std::vector<TensorD> in{uniform(rng, {1}), uniform(rng, {1}), uniform(rng, {1})};
                  LossWeights w;
                  w.lambda1 = 0.7;
                  w.lambda2 = 1.3;
                  Graph g = [w](Inputs v) { return combined_loss<D>(v[0], v.subspan(1), w); };
                  return gradcheck<D>(g, in, opt);
                }});
  cs.push_back(simple("pyramid_pool", [](Rng& r) { return std::vector{uniform(r, {11, 3})}; },
                      [](Inputs v) { return pyramid_pool(v[0], 4); }));
  const std::size_t coords = suite.full_graph_coords;
  cs.push_back({"embed_multi_siamese_graph", [coords](std::uint64_t seed, const GradcheckOptions& base) {
                  const ModelConfig cfg = tiny_model_config();
                  const ModelT<D> init(cfg, substream_seed(seed, "model"));
                  Rng rng(substream_seed(seed, "inputs"));
                  const std::size_t n = 2;
                  const std::size_t frames = 8;
                  const std::size_t videos = 2 * n;
                  std::vector<std::string> names;
                  std::vector<TensorD> in;
                  for (const auto& p : init.params().items()) {
                    names.push_back(p.name);
                    // non-zero biases so every parameter has a generic gradient
                    in.push_back(p.var.value().rank() == 1 ? uniform(rng, p.var.shape(), -0.1, 0.1)
                                                           : p.var.value());
                  }
                  const TensorD rgb = uniform(rng, {videos * frames, kLRHeight, kLRWidth, 3}, 0.0, 1.0);
                  const TensorD flow = uniform(rng, {videos * frames, kLRHeight, kLRWidth, kFlowChannels});
                  std::vector<std::size_t> labels;
                  for (std::size_t i = 0; i < videos; ++i) labels.push_back(uniform_index(rng, cfg.num_classes));
                  Graph g = [&](Inputs v) {
                    ParamSet<D> ps;
                    for (std::size_t i = 0; i < names.size(); ++i) ps.add_var(names[i], v[i]);
                    ModelT<D> m(cfg, std::move(ps));
                    std::vector<std::size_t> counts(videos, frames);
                    VarD emb = m.embed(VarD(rgb), VarD(flow), counts);
                    // margin large enough that the aggregate hinge is active
                    VarD ms = multi_siamese_loss(slice(emb, 0, n), slice(emb, n, 2 * n), 2.0);
                    VarD ce = softmax_cross_entropy<D>(m.logits(emb), labels);
                    const VarD cls[] = {ce};
                    return combined_loss<D>(ms, cls, LossWeights{});
                  };
                  GradcheckOptions opt = base;
                  opt.max_coords_per_input = coords;
                  opt.sample_seed = substream_seed(seed, "coords");
                  opt.skip_kinks = true;
                  return gradcheck<D>(g, in, opt);
                }});
  return cs;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> out;
  for (const auto& c : all_cases({})) out.push_back(c.name);
  return out;
}

std::vector<GradcheckCaseResult> run_gradcheck_suite(
    const GradcheckSuiteOptions& suite, const std::function<void(const GradcheckCaseResult&)>& on_case) {
  if (suite.seeds == 0) throw std::invalid_argument("gradcheck suite: seeds must be >= 1");
  GradcheckOptions opt;
  opt.epsilon = suite.epsilon;
  opt.tolerance = suite.tolerance;
  std::vector<GradcheckCaseResult> out;
  for (const auto& c : all_cases(suite)) {
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckCaseResult r;
    r.name = c.name;
    for (std::size_t s = 0; s < suite.seeds; ++s) {
      const GradcheckReport rep = c.run(substream_seed(suite.base_seed, c.name, s), opt);
      r.coords += rep.coords_checked;
      r.skipped += rep.coords_skipped;
      r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
      ++r.seeds;
    }
    r.passed = r.max_rel_error < suite.tolerance &&
               double(r.skipped) <= suite.max_skipped_fraction * double(r.coords + r.skipped);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_case) on_case(r);
    out.push_back(r);
  }
  return out;
}

}  // namespace lrsiam
