#pragma once

// Layered strain-hardening tissue foundation.
//
// Each layer contributes a nonlinear spring reaction
//   f = k(lambda) * u * w_eff,    lambda = (t - |u|) / t,
//   k(lambda) = 2 mu (lambda^(alpha-1) + 1/2 lambda^(-alpha/2-1)),
// where u is the local compression of the tissue relative to the cut path.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "needlesim/errors.hpp"

namespace needlesim {

/// Stretch floor; keeps k(lambda) finite when tissue is nearly fully compressed.
inline constexpr double kDefaultLambdaMin = 0.05;

struct TissueLayer {
  std::string name;
  double mu = 0.0;         // shear modulus [MPa]
  double alpha = 0.0;      // nonlinearity exponent
  double thickness = 0.0;  // initial thickness [mm]

  friend bool operator==(const TissueLayer&, const TissueLayer&) = default;
};

inline void validate(const TissueLayer& layer) {
  if (!(layer.mu > 0.0)) throw ConfigError("layer '" + layer.name + "': mu must be positive");
  if (!(layer.thickness > 0.0))
    throw ConfigError("layer '" + layer.name + "': thickness must be positive");
  if (layer.alpha == 0.0 || !std::isfinite(layer.alpha))
    throw ConfigError("layer '" + layer.name + "': alpha must be a nonzero finite number");
}

/// Ordered layers from the skin inward. Layer i occupies [start_i, start_i + thickness_i),
/// with the skin surface at x = 0. The last layer also owns its far boundary.
class LayerStack {
 public:
  LayerStack() = default;

  explicit LayerStack(std::vector<TissueLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("layer stack must contain at least one layer");
    starts_.reserve(layers_.size());
    double x = 0.0;
    for (const auto& layer : layers_) {
      validate(layer);
      starts_.push_back(x);
      x += layer.thickness;
    }
    total_ = x;
  }

  std::span<const TissueLayer> layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  double total_thickness() const noexcept { return total_; }
  double start(std::size_t i) const { return starts_.at(i); }
  double end(std::size_t i) const { return i + 1 < starts_.size() ? starts_[i + 1] : total_; }

  /// Index of the layer containing x; boundaries belong to the deeper layer.
  std::size_t index_at(double x) const {
    if (!(x >= 0.0 && x <= total_))
      throw DomainError("axial position " + std::to_string(x) + " mm lies outside the tissue [0, " +
                        std::to_string(total_) + "]");
    std::size_t i = 0;
    while (i + 1 < starts_.size() && x >= starts_[i + 1]) ++i;
    return i;
  }

  /// Copy with every layer's mu multiplied by the matching factor.
  LayerStack scaled(std::span<const double> mu_scale) const {
    if (mu_scale.size() != layers_.size())
      throw PreconditionError("need one mu scale factor per layer");
    auto out = layers_;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(mu_scale[i] > 0.0)) throw PreconditionError("mu scale factors must be positive");
      out[i].mu *= mu_scale[i];
    }
    return LayerStack(std::move(out));
  }

  friend bool operator==(const LayerStack& a, const LayerStack& b) { return a.layers_ == b.layers_; }

 private:
  std::vector<TissueLayer> layers_;
  std::vector<double> starts_;
  double total_ = 0.0;
};

inline const TissueLayer& layer_at(const LayerStack& stack, double x) {
  return stack.layers()[stack.index_at(x)];
}

/// Tuned five-layer prostate phantom (skin, fat, muscle, soft tissue, prostate).
inline LayerStack default_layer_stack() {
  return LayerStack({
      {"Skin", 2.0e2, 1.0, 2.0},
      {"Fat", 1.5e1, -1.0, 3.0},
      {"Muscle", 3.0e1, -1.0, 5.0},
      {"Soft Tissue", 8.0e2, -1.0, 10.5},
      {"Prostate", 3.2e3, 1.0, 55.0},
  });
}

inline double stretch(double compression, double thickness, double lambda_min = kDefaultLambdaMin) {
  if (!(thickness > 0.0)) throw PreconditionError("layer thickness must be positive");
  if (compression < 0.0) throw PreconditionError("compression must be non-negative");
  const double lambda = (thickness - compression) / thickness;
  return lambda < lambda_min ? lambda_min : lambda;
}

/// k(lambda) = d sigma_comp / d lambda. Positive and strictly decreasing in lambda.
inline double tangent_stiffness(const TissueLayer& layer, double lambda) {
  if (!(lambda > 0.0)) throw SingularityError("tangent stiffness is singular for lambda <= 0");
  return 2.0 * layer.mu *
         (std::pow(lambda, layer.alpha - 1.0) + 0.5 * std::pow(lambda, -0.5 * layer.alpha - 1.0));
}

/// dk/dlambda.
inline double tangent_stiffness_slope(const TissueLayer& layer, double lambda) {
  if (!(lambda > 0.0)) throw SingularityError("tangent stiffness is singular for lambda <= 0");
  const double a = layer.alpha;
  return 2.0 * layer.mu *
         ((a - 1.0) * std::pow(lambda, a - 2.0) +
          0.5 * (-0.5 * a - 1.0) * std::pow(lambda, -0.5 * a - 2.0));
}

/// Parameters shared by every foundation spring.
struct FoundationLaw {
  double contact_width = 1.3e-6;  // w_eff [mm]: tangent modulus -> spring stiffness
  double lambda_min = kDefaultLambdaMin;

  friend bool operator==(const FoundationLaw&, const FoundationLaw&) = default;
};

/// Reaction magnitude [N/mm] of a layer compressed by `compression` mm.
inline double foundation_force(const TissueLayer& layer, double compression,
                               const FoundationLaw& law = {}) {
  const double lambda = stretch(compression, layer.thickness, law.lambda_min);
  return tangent_stiffness(layer, lambda) * compression * law.contact_width;
}

/// Signed reaction and its derivative for a deflection `delta` from the rest position.
/// The reaction opposes the deflection: force = -sign(delta) * foundation_force(|delta|).
struct SpringResponse {
  double force = 0.0;      // acts on the needle
  double stiffness = 0.0;  // -d force / d delta, always positive
};

inline SpringResponse spring_response(const TissueLayer& layer, double delta,
                                      const FoundationLaw& law = {}) {
  const double c = std::abs(delta);
  const double raw_lambda = (layer.thickness - c) / layer.thickness;
  const double lambda = raw_lambda < law.lambda_min ? law.lambda_min : raw_lambda;
  const double k = tangent_stiffness(layer, lambda);
  double dfdc = k;
  if (raw_lambda > law.lambda_min) dfdc += c * (-tangent_stiffness_slope(layer, lambda)) / layer.thickness;
  return {-k * delta * law.contact_width, dfdc * law.contact_width};
}

}  // namespace needlesim
