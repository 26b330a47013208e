#include <doctest.h>

#include "iotids/model_zoo.hpp"
#include "kernel_cases.hpp"

using namespace iotids;
using namespace iotids::nn;
using namespace kernel_cases;

TEST_CASE("every differentiable op passes the central-difference check") {
  for (const auto& c : gradient_cases()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(seed_value(seed));
      const double err = c.run(rng);
      INFO(c.name << " seed " << seed << " relative error " << err);
      CHECK(err < kGradTolerance);
    }
  }
}

TEST_CASE("gradcheck full model on a two-image window") {
  for (BackboneKind kind : kAllBackbones) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ModelConfig cfg;
      cfg.backbone = kind;
      cfg.base_channels = 2;
      cfg.blocks = 2;
      cfg.window_length = 2;
      cfg.seed = seed;
      ModelGraph<double> model(cfg);
      Rng rng(seed + 40);
      const auto r = static_cast<Index>(model.resolution());
      const Index batch = 2, steps = 2;
      const T images = random_tensor(rng, {steps * batch, r, r, 3}, 1.0);
      // Zero-initialised biases put some ReLU inputs exactly on the kink;
      // jitter every parameter so the check runs at a generic point.
      for (auto* p : model.trainable_parameters()) {
        for (Index i = 0; i < p->value.size(); ++i) p->value[i] += uniform(rng, -0.1, 0.1);
      }
      const std::vector<Index> labels{0, 2};
      const std::vector<double> weights{1.5, 3.0};

      // Perturb the model's own parameters in place.
      auto loss_of = [&](bool record) {
        Tape<double> tape(record);
        const Var feats = model.backbone(tape, tape.constant(images), BatchNormMode::Train);
        const Var probs = model.head(tape, feats, steps, batch);
        const Var loss = weighted_cross_entropy(tape, probs, std::span<const Index>(labels),
                                                std::span<const double>(weights));
        if (record) tape.backward(loss);
        return tape.value(loss)[0];
      };
      for (auto* p : model.parameters()) p->zero_grad();
      loss_of(true);
      const double h = 1e-5;
      double worst = 0;
      for (auto* p : model.trainable_parameters()) {
        double diff2 = 0, a2 = 0, n2 = 0;
        for (int k = 0; k < 6; ++k) {
          const auto i = static_cast<Index>(uniform_index(rng, p->value.size()));
          const double saved = p->value[i];
          p->value[i] = saved + h;
          const double up = loss_of(false);
          p->value[i] = saved - h;
          const double down = loss_of(false);
          p->value[i] = saved;
          const double numeric = (up - down) / (2 * h);
          diff2 += (p->grad[i] - numeric) * (p->grad[i] - numeric);
          a2 += p->grad[i] * p->grad[i];
          n2 += numeric * numeric;
        }
        const double denom = std::sqrt(a2) + std::sqrt(n2);
        if (denom > 1e-10) {
          const double err = std::sqrt(diff2) / denom;
          INFO(to_string(kind) << " seed " << seed << " parameter " << p->name << " error " << err);
          CHECK(err < kGradTolerance);
          worst = std::max(worst, err);
        }
      }
      CHECK(worst < kGradTolerance);
    }
  }
}
