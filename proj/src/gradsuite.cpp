/* Copyright 2026 The ExFuse-CPP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "exfuse/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <random>

#include "exfuse/blocks.hpp"
#include "exfuse/errors.hpp"
#include "exfuse/gradcheck.hpp"
#include "exfuse/model.hpp"

namespace exfuse {

namespace {

using D = double;
using Forward = std::function<Tensor<D>()>;

Tensor<D> uniform(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<D> v(shape.numel());
  for (auto& x : v) x = u(rng);
  Tensor<D> t(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

void append_grad(const Tensor<D>& t, std::vector<double>& out) {
  if (t.has_grad()) {
    out.insert(out.end(), t.grad().begin(), t.grad().end());
  } else {
    out.insert(out.end(), t.numel(), 0.0);
  }
}

// Compares the analytic gradient of sum(R * f()) with central differences
// for every tensor in `wrt`.
GradCheckResult check(const std::string& name, const Forward& f, std::vector<Tensor<D>> wrt, Rng& rng) {
  Tensor<D> projection;
  {
    NoGradGuard no_grad;
    const Shape out_shape = f().shape();
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<D> v(out_shape.numel());
    for (auto& x : v) x = u(rng);
    projection = Tensor<D>(out_shape, std::move(v));
  }
  auto objective = [&] { return sum(mul(f(), projection)); };

  for (auto& t : wrt) t.zero_grad();
  backward(objective());
  std::vector<double> analytic, numeric;
  for (auto& t : wrt) {
    append_grad(t, analytic);
    const Tensor<D> fd = finite_diff_grad([&](const Tensor<D>&) { return objective().item(); }, t);
    numeric.insert(numeric.end(), fd.values().begin(), fd.values().end());
  }
  return {name, max_relative_error(analytic, numeric), analytic.size()};
}

std::vector<Tensor<D>> params_of(StateDict<D>& state) { return trainable_parameters(state); }

template <typename Module>
std::vector<Tensor<D>> module_params(Module& m) {
  StateDict<D> state;
  m.collect("m", state);
  return params_of(state);
}

std::vector<Tensor<D>> join(std::vector<Tensor<D>> a, const std::vector<Tensor<D>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

LabelMap random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
  LabelMap labels(n, h, w);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(classes) - 1);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& y : labels.data) y = u(rng) < 0.15 ? kIgnoreLabel : cls(rng);
  return labels;
}

using Case = std::function<GradCheckResult(Rng&)>;

const std::vector<std::pair<std::string, Case>>& cases() {
  static const std::vector<std::pair<std::string, Case>> all = {
      {"conv2d",
       [](Rng& rng) {
         auto x = uniform({2, 3, 5, 6}, rng), w = uniform({4, 3, 3, 3}, rng), b = uniform({1, 4, 1, 1}, rng);
         return check("conv2d", [=] { return conv2d(x, w, b, 1, Pad2(1)); }, {x, w, b}, rng);
       }},
      {"conv2d_strided",
       [](Rng& rng) {
         auto x = uniform({2, 2, 7, 6}, rng), w = uniform({3, 2, 3, 1}, rng);
         return check("conv2d_strided", [=] { return conv2d(x, w, Tensor<D>(), 2, Pad2{1, 0}); }, {x, w}, rng);
       }},
      {"deconv2d",
       [](Rng& rng) {
         auto x = uniform({2, 3, 4, 3}, rng), w = uniform({3, 2, 4, 4}, rng), b = uniform({1, 2, 1, 1}, rng);
         return check("deconv2d", [=] { return deconv2d(x, w, b, 2, Pad2(1)); }, {x, w, b}, rng);
       }},
      {"bilinear_upsample",
       [](Rng& rng) {
         auto x = uniform({2, 2, 3, 4}, rng);
         return check("bilinear_upsample", [=] { return bilinear_upsample(x, 4); }, {x}, rng);
       }},
      {"sub_pixel_shuffle",
       [](Rng& rng) {
         auto x = uniform({2, 8, 3, 2}, rng);
         return check("sub_pixel_shuffle", [=] { return sub_pixel_shuffle(x, 2); }, {x}, rng);
       }},
      {"sub_pixel_unshuffle",
       [](Rng& rng) {
         auto x = uniform({1, 2, 6, 4}, rng);
         return check("sub_pixel_unshuffle", [=] { return sub_pixel_unshuffle(x, 2); }, {x}, rng);
       }},
      {"batch_norm",
       [](Rng& rng) {
         auto x = uniform({3, 2, 3, 3}, rng), g = uniform({1, 2, 1, 1}, rng, 0.5, 1.5), b = uniform({1, 2, 1, 1}, rng);
         auto state = std::make_shared<BatchNormState<D>>(2);
         return check("batch_norm", [=] { return batch_norm(x, g, b, *state, true); }, {x, g, b}, rng);
       }},
      {"batch_norm_frozen",
       [](Rng& rng) {
         auto x = uniform({2, 3, 2, 2}, rng), g = uniform({1, 3, 1, 1}, rng), b = uniform({1, 3, 1, 1}, rng);
         auto state = std::make_shared<BatchNormState<D>>(3);
         state->running_mean = {0.1, -0.2, 0.3};
         state->running_var = {0.5, 1.5, 2.0};
         return check("batch_norm_frozen", [=] { return batch_norm(x, g, b, *state, false); }, {x, g, b}, rng);
       }},
      {"relu",
       [](Rng& rng) {
         auto x = uniform({2, 3, 4, 4}, rng);
         return check("relu", [=] { return relu(x); }, {x}, rng);
       }},
      {"add",
       [](Rng& rng) {
         auto a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return check("add", [=] { return add(a, b); }, {a, b}, rng);
       }},
      {"sub",
       [](Rng& rng) {
         auto a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return check("sub", [=] { return sub(a, b); }, {a, b}, rng);
       }},
      {"mul",
       [](Rng& rng) {
         auto a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return check("mul", [=] { return mul(a, b); }, {a, b}, rng);
       }},
      {"mul_shared",
       [](Rng& rng) {
         auto a = uniform({1, 2, 3, 3}, rng);
         return check("mul_shared", [=] { return mul(a, a); }, {a}, rng);
       }},
      {"scale",
       [](Rng& rng) {
         auto a = uniform({2, 2, 3, 1}, rng);
         return check("scale", [=] { return scale(a, -1.7); }, {a}, rng);
       }},
      {"concat_channels",
       [](Rng& rng) {
         auto a = uniform({2, 2, 3, 3}, rng), b = uniform({2, 1, 3, 3}, rng);
         return check("concat_channels", [=] {
           const std::vector<Tensor<D>> parts{a, b};
           return concat_channels<D>(parts);
         }, {a, b}, rng);
       }},
      {"sum",
       [](Rng& rng) {
         auto a = uniform({2, 2, 3, 3}, rng);
         return check("sum", [=] { return sum(a); }, {a}, rng);
       }},
      {"max_pool2d",
       [](Rng& rng) {
         auto a = uniform({2, 2, 4, 6}, rng);
         return check("max_pool2d", [=] { return max_pool2d(a, 2); }, {a}, rng);
       }},
      {"global_avg_pool",
       [](Rng& rng) {
         auto a = uniform({2, 3, 3, 5}, rng);
         return check("global_avg_pool", [=] { return global_avg_pool(a); }, {a}, rng);
       }},
      {"flip_horizontal",
       [](Rng& rng) {
         auto a = uniform({2, 2, 3, 5}, rng);
         return check("flip_horizontal", [=] { return flip_horizontal(a); }, {a}, rng);
       }},
      {"softmax_cross_entropy",
       [](Rng& rng) {
         auto logits = uniform({2, 4, 3, 3}, rng, -3, 3);
         const LabelMap labels = random_labels(2, 3, 3, 4, rng);
         return check("softmax_cross_entropy", [=] { return softmax_cross_entropy(logits, labels); }, {logits}, rng);
       }},
      {"sigmoid_binary_cross_entropy",
       [](Rng& rng) {
         auto logits = uniform({3, 4, 1, 1}, rng, -4, 4);
         Tensor<D> targets({3, 4, 1, 1}, std::vector<D>{1, 0, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1});
         return check("sigmoid_binary_cross_entropy",
                      [=] { return sigmoid_binary_cross_entropy(logits, targets); }, {logits}, rng);
       }},
      {"gcn_block",
       [](Rng& rng) {
         auto block = std::make_shared<GcnBlock<D>>(3, 2, 5, rng);
         auto x = uniform({2, 3, 6, 5}, rng);
         return check("gcn_block", [=] { return (*block)(x); }, join({x}, module_params(*block)), rng);
       }},
      {"boundary_refine",
       [](Rng& rng) {
         auto block = std::make_shared<BoundaryRefine<D>>(3, rng);
         auto x = uniform({2, 3, 4, 4}, rng);
         return check("boundary_refine", [=] { return (*block)(x); }, join({x}, module_params(*block)), rng);
       }},
      {"ss_head",
       [](Rng& rng) {
         auto head = std::make_shared<SemanticSupervisionHead<D>>(3, 4, 3, rng);
         auto x = uniform({2, 3, 4, 4}, rng);
         // One objective over both outputs, each through its own projection.
         Tensor<D> r_tap = uniform({2, 4, 4, 4}, rng).detach(), r_logits = uniform({2, 3, 1, 1}, rng).detach();
         return check("ss_head", [=] {
           auto out = (*head)(x, true);
           return add(sum(mul(out.tap, r_tap)), sum(mul(out.logits, r_logits)));
         }, join({x}, module_params(*head)), rng);
       }},
      {"seb_forward",
       [](Rng& rng) {
         auto seb = std::make_shared<SemanticEmbeddingBranch<D>>(2, std::vector<std::size_t>{3, 4}, rng);
         auto low = uniform({2, 2, 8, 8}, rng), mid = uniform({2, 3, 4, 4}, rng), high = uniform({2, 4, 2, 2}, rng);
         return check("seb_forward", [=] { return (*seb)(low, {mid, high}); },
                      join({low, mid, high}, module_params(*seb)), rng);
       }},
      {"ecre_forward",
       [](Rng& rng) {
         Rng init(rng());
         auto classifier = std::make_shared<Conv2d<D>>(Conv2d<D>::same(2, 3, 1, true, init));
         auto x = uniform({2, 8, 3, 3}, rng);
         Tensor<D> r_up = uniform({2, 2, 6, 6}, rng).detach(), r_aux = uniform({2, 3, 6, 6}, rng).detach();
         return check("ecre_forward", [=] {
           auto out = ecre_forward(x, 2, *classifier);
           return add(sum(mul(out.upsampled, r_up)), sum(mul(out.aux_logits, r_aux)));
         }, join({x}, module_params(*classifier)), rng);
       }},
      {"ecre_deconv_supervised",
       [](Rng& rng) {
         auto m = std::make_shared<ChannelResolutionEmbedding<D>>(3, 2, 3, EcreVariant::deconv_supervised, rng);
         auto x = uniform({2, 3, 3, 3}, rng);
         Tensor<D> r_up = uniform({2, 2, 6, 6}, rng).detach(), r_aux = uniform({2, 3, 6, 6}, rng).detach();
         return check("ecre_deconv_supervised", [=] {
           auto out = (*m)(x);
           return add(sum(mul(out.upsampled, r_up)), sum(mul(out.aux_logits, r_aux)));
         }, join({x}, module_params(*m)), rng);
       }},
      {"dap_forward",
       [](Rng& rng) {
         auto x = uniform({2, 2 * 9, 4, 3}, rng);
         return check("dap_forward", [=] { return dap_forward(x, 3, 2); }, {x}, rng);
       }},
  };
  return all;
}

const Case& find_case(const std::string& name) {
  for (const auto& [n, c] : cases())
    if (n == name) return c;
  throw ConfigError("unknown gradient check '" + name + "'");
}

}  // namespace

std::vector<std::string> gradient_case_names() {
  std::vector<std::string> names;
  for (const auto& [n, c] : cases()) names.push_back(n);
  return names;
}

GradCheckResult run_gradient_case(const std::string& name, std::uint64_t seed) {
  const Case& c = find_case(name);
  Rng rng(seed);
  return c(rng);
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.classes = 2;
  c.input_size = 32;
  c.plan = StagePlan{{1, 1, 1, 1}, {4, 6, 8, 8}, 4};
  c.lr_plan = StagePlan{{2, 1, 1, 1}, {4, 6, 6, 8}, 4};
  c.ss = c.lr = c.ecre = c.seb = c.dap = true;
  c.decoder_width = 4;
  c.gcn_kernel = 3;
  c.ss_tap_width = 4;
  return c;
}

GradCheckResult run_end_to_end_check(std::uint64_t seed, std::size_t per_tensor, double eps) {
  const ModelConfig config = tiny_model_config();
  ExFuseModel<D> model(config, seed);
  Rng rng(seed + 1);
  auto images = uniform({2, 3, config.input_size, config.input_size}, rng, 0, 1);
  const LabelMap labels = random_labels(2, config.input_size, config.input_size, config.classes, rng);
  auto objective = [&] { return total_loss(model.forward(images, true), labels, config); };

  std::vector<Tensor<D>> wrt = model.parameters();
  wrt.push_back(images);
  for (auto& t : wrt) t.zero_grad();
  backward(objective());

  std::vector<double> analytic, numeric;
  for (auto& t : wrt) {
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_tensor, idx.size()));
    const auto fd = finite_diff_grad([&](const Tensor<D>&) { return objective().item(); }, t, idx, eps);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      analytic.push_back(t.has_grad() ? t.grad()[idx[k]] : 0.0);
      numeric.push_back(fd[k]);
    }
  }
  return {"end_to_end", max_relative_error(analytic, numeric), analytic.size()};
}

}  // namespace exfuse
