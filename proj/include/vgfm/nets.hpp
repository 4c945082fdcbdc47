#pragma once

#include "vgfm/autodiff.hpp"
#include "vgfm/core_data.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace vgfm::nets {

/// MLP shape. `depth` counts linear layers; every layer but the last is
/// followed by LeakyReLU.
struct Architecture {
  int in_dim = 1;
  int out_dim = 1;
  int depth = 3;
  int width = 256;
  double negative_slope = 0.01;

  bool operator==(const Architecture&) const = default;
};

/// 3 linear layers, or 5 when the state dimension exceeds 50.
int default_depth(int state_dim);

struct NetworkParams {
  Architecture arch;
  std::vector<Matrix> weights;  // layer l: out_l x in_l
  std::vector<Vector> biases;   // layer l: out_l

  std::size_t num_params() const;
  /// Layer by layer: W (column-major) then b.
  Vector flatten() const;
  void assign(const Vector& flat);
  bool all_finite() const;
  /// Same architecture, all parameters zero.
  NetworkParams zeros_like() const;
  bool operator==(const NetworkParams&) const = default;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. The input
/// dimension is state_dim + 1 (time is the last input coordinate).
NetworkParams init_network(int state_dim, int out_dim, int depth, int width, std::uint64_t seed,
                           double negative_slope = 0.01);

/// Batched evaluation on rows of x with a shared time t -> N x out_dim.
Matrix forward(const NetworkParams& p, const Matrix& x, double t);
/// Batched evaluation with a per-row time.
Matrix forward(const NetworkParams& p, const Matrix& x, const Vector& t);
/// Single point.
Vector forward_point(const NetworkParams& p, const Vector& x, double t);

// -----------------------------------------------------------------------------
// Differentiable evaluation
// -----------------------------------------------------------------------------

/// Parameters placed on a tape.
struct TapedNet {
  const NetworkParams* params = nullptr;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

/// `trainable` selects variable (gradient kept) or constant leaves.
TapedNet bind(ad::Tape& tape, const NetworkParams& p, bool trainable = true);

/// Forward of rows of `input`, which already includes the time column.
ad::Var forward(ad::Tape& tape, const TapedNet& net, ad::Var input);
/// Forward of x (N x d) with shared time t.
ad::Var forward(ad::Tape& tape, const TapedNet& net, ad::Var x, double t);

/// Gradient with the same layout as the parameters, plus the loss value.
struct Gradient {
  double loss = 0.0;
  NetworkParams grad;
};

Gradient grad_scalar(const NetworkParams& p,
                     const std::function<ad::Var(ad::Tape&, const TapedNet&)>& loss);

struct JointGradient {
  double loss = 0.0;
  NetworkParams grad_v;
  NetworkParams grad_g;
};

JointGradient grad_scalar(const NetworkParams& v, const NetworkParams& g,
                          const std::function<ad::Var(ad::Tape&, const TapedNet&, const TapedNet&)>& loss);

/// Collect leaf gradients of a bound net after tape.backward().
NetworkParams collect_grad(const ad::Tape& tape, const TapedNet& net);

// -----------------------------------------------------------------------------
// Adam
// -----------------------------------------------------------------------------

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamState&) const = default;
};

AdamState make_adam(const NetworkParams& p, double lr);

/// Bias-corrected Adam update in place. Throws ValidationError on shape
/// mismatch.
void adam_step(NetworkParams& p, AdamState& state, const NetworkParams& grad);

// -----------------------------------------------------------------------------
// Checkpoints
// -----------------------------------------------------------------------------

/// Byte layout:
///   "VGFMCKPT1\n"                      10 bytes
///   header length L                    uint64, little-endian
///   header                             L bytes of UTF-8 JSON
///   parameter block                    float64, little-endian
/// The header lists each block's offset and count (in doubles); blocks are
/// the velocity parameters, growth parameters, then Adam m and v for each.
struct Checkpoint {
  NetworkParams velocity;
  NetworkParams growth;
  AdamState adam_velocity;
  AdamState adam_growth;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string phase;
  std::string rng_state;
  /// Free-form JSON object (the training configuration).
  std::string config_json = "{}";
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vgfm::nets
