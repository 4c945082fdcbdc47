#include "vgfm/nets.hpp"

#include "vgfm/random.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vgfm::nets {

using json = nlohmann::json;

int default_depth(int state_dim) { return state_dim > 50 ? 5 : 3; }

// -----------------------------------------------------------------------------
// Parameters
// -----------------------------------------------------------------------------

std::size_t NetworkParams::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

Vector NetworkParams::flatten() const {
  Vector out(static_cast<Eigen::Index>(num_params()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.segment(k, weights[l].size()) = Eigen::Map<const Vector>(weights[l].data(), weights[l].size());
    k += weights[l].size();
    out.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return out;
}

void NetworkParams::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_params())
    throw ValidationError("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                          std::to_string(num_params()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::Map<Vector>(weights[l].data(), weights[l].size()) = flat.segment(k, weights[l].size());
    k += weights[l].size();
    biases[l] = flat.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

bool NetworkParams::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z = *this;
  for (auto& w : z.weights) w.setZero();
  for (auto& b : z.biases) b.setZero();
  return z;
}

NetworkParams init_network(int state_dim, int out_dim, int depth, int width, std::uint64_t seed, double slope) {
  if (state_dim < 1 || out_dim < 1 || width < 1) throw ValidationError("init_network: dimensions must be positive");
  if (depth < 2) throw ValidationError("init_network: depth must be >= 2");
  NetworkParams p;
  p.arch = Architecture{state_dim + 1, out_dim, depth, width, slope};
  Rng rng(seed);
  int fan_in = state_dim + 1;
  for (int l = 0; l < depth; ++l) {
    const int fan_out = l + 1 == depth ? out_dim : width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix W(fan_out, fan_in);
    for (Eigen::Index k = 0; k < W.size(); ++k) W.data()[k] = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(W));
    p.biases.push_back(Vector::Zero(fan_out));
    fan_in = fan_out;
  }
  return p;
}

// -----------------------------------------------------------------------------
// Forward
// -----------------------------------------------------------------------------

namespace {

Matrix run_layers(const NetworkParams& p, Matrix h) {
  const double slope = p.arch.negative_slope;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Matrix z = h * p.weights[l].transpose();
    z.rowwise() += p.biases[l].transpose();
    if (l + 1 < p.weights.size()) z = z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    h = std::move(z);
  }
  return h;
}

void check_input(const NetworkParams& p, const Matrix& x) {
  if (x.cols() + 1 != p.arch.in_dim)
    throw ValidationError("network expects state dimension " + std::to_string(p.arch.in_dim - 1) + ", got " +
                          std::to_string(x.cols()));
  if (!x.allFinite()) throw ValidationError("network input contains non-finite values");
}

}  // namespace

Matrix forward(const NetworkParams& p, const Matrix& x, double t) {
  check_input(p, x);
  if (!std::isfinite(t)) throw ValidationError("network time input is not finite");
  Matrix in(x.rows(), x.cols() + 1);
  in << x, Vector::Constant(x.rows(), t);
  return run_layers(p, std::move(in));
}

Matrix forward(const NetworkParams& p, const Matrix& x, const Vector& t) {
  check_input(p, x);
  if (t.size() != x.rows()) throw ValidationError("time vector length does not match batch size");
  if (!t.allFinite()) throw ValidationError("network time input is not finite");
  Matrix in(x.rows(), x.cols() + 1);
  in << x, t;
  return run_layers(p, std::move(in));
}

Vector forward_point(const NetworkParams& p, const Vector& x, double t) {
  return forward(p, Matrix(x.transpose()), t).row(0).transpose();
}

TapedNet bind(ad::Tape& tape, const NetworkParams& p, bool trainable) {
  TapedNet n;
  n.params = &p;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    n.weights.push_back(trainable ? tape.variable(p.weights[l]) : tape.constant(p.weights[l]));
    n.biases.push_back(trainable ? tape.variable(Matrix(p.biases[l])) : tape.constant(Matrix(p.biases[l])));
  }
  return n;
}

ad::Var forward(ad::Tape& tape, const TapedNet& net, ad::Var input) {
  const Matrix& in = tape.value(input);
  if (in.cols() != net.params->arch.in_dim) throw ValidationError("taped forward: input width mismatch");
  if (!in.allFinite()) throw ValidationError("network input contains non-finite values");
  const double slope = net.params->arch.negative_slope;
  ad::Var h = input;
  const std::size_t L = net.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    if (l + 1 < L)
      h = ad::dense_leaky(tape, h, net.weights[l], net.biases[l], slope);
    else
      h = ad::linear(tape, h, net.weights[l], net.biases[l]);
  }
  return h;
}

ad::Var forward(ad::Tape& tape, const TapedNet& net, ad::Var x, double t) {
  const auto rows = tape.value(x).rows();
  const ad::Var tc = tape.constant(Matrix::Constant(rows, 1, t));
  return forward(tape, net, ad::hcat(tape, x, tc));
}

NetworkParams collect_grad(const ad::Tape& tape, const TapedNet& net) {
  NetworkParams g = net.params->zeros_like();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights[l] = tape.grad(net.weights[l]);
    g.biases[l] = tape.grad(net.biases[l]).col(0);
  }
  return g;
}

Gradient grad_scalar(const NetworkParams& p, const std::function<ad::Var(ad::Tape&, const TapedNet&)>& loss) {
  ad::Tape tape;
  const TapedNet net = bind(tape, p, true);
  const ad::Var out = loss(tape, net);
  Gradient res;
  res.loss = tape.scalar(out);
  tape.backward(out);
  res.grad = collect_grad(tape, net);
  return res;
}

JointGradient grad_scalar(const NetworkParams& v, const NetworkParams& g,
                          const std::function<ad::Var(ad::Tape&, const TapedNet&, const TapedNet&)>& loss) {
  ad::Tape tape;
  const TapedNet tv = bind(tape, v, true);
  const TapedNet tg = bind(tape, g, true);
  const ad::Var out = loss(tape, tv, tg);
  JointGradient res;
  res.loss = tape.scalar(out);
  tape.backward(out);
  res.grad_v = collect_grad(tape, tv);
  res.grad_g = collect_grad(tape, tg);
  return res;
}

// -----------------------------------------------------------------------------
// Adam
// -----------------------------------------------------------------------------

AdamState make_adam(const NetworkParams& p, double lr) {
  AdamState s;
  const auto n = static_cast<Eigen::Index>(p.num_params());
  s.m = Vector::Zero(n);
  s.v = Vector::Zero(n);
  s.lr = lr;
  return s;
}

void adam_step(NetworkParams& p, AdamState& s, const NetworkParams& grad) {
  if (!(grad.arch == p.arch)) throw ValidationError("adam_step: gradient architecture differs from parameters");
  const Vector gflat = grad.flatten();
  if (s.m.size() != gflat.size() || s.v.size() != gflat.size())
    throw ValidationError("adam_step: optimizer state has " + std::to_string(s.m.size()) + " entries, expected " +
                          std::to_string(gflat.size()));
  s.step += 1;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * gflat;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * gflat.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const Vector mhat = s.m / bc1;
  const Vector vhat = s.v / bc2;
  Vector flat = p.flatten();
  flat.array() -= s.lr * mhat.array() / (vhat.array().sqrt() + s.eps);
  p.assign(flat);
}

// -----------------------------------------------------------------------------
// Checkpoints
// -----------------------------------------------------------------------------

namespace {

constexpr char kMagic[] = "VGFMCKPT1\n";
constexpr std::size_t kMagicLen = 10;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return v;
}

void put_doubles(std::string& out, const Vector& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) put_u64(out, std::bit_cast<std::uint64_t>(v(k)));
}

json arch_json(const Architecture& a) {
  return json{{"in_dim", a.in_dim},
              {"out_dim", a.out_dim},
              {"depth", a.depth},
              {"width", a.width},
              {"negative_slope", a.negative_slope}};
}

Architecture arch_from(const json& j) {
  Architecture a;
  a.in_dim = j.at("in_dim").get<int>();
  a.out_dim = j.at("out_dim").get<int>();
  a.depth = j.at("depth").get<int>();
  a.width = j.at("width").get<int>();
  a.negative_slope = j.at("negative_slope").get<double>();
  if (a.in_dim < 2 || a.out_dim < 1 || a.depth < 2 || a.width < 1) throw ParseError("checkpoint: invalid architecture");
  return a;
}

NetworkParams shaped(const Architecture& a) {
  NetworkParams p;
  p.arch = a;
  int fan_in = a.in_dim;
  for (int l = 0; l < a.depth; ++l) {
    const int fan_out = l + 1 == a.depth ? a.out_dim : a.width;
    p.weights.push_back(Matrix::Zero(fan_out, fan_in));
    p.biases.push_back(Vector::Zero(fan_out));
    fan_in = fan_out;
  }
  return p;
}

json adam_json(const AdamState& s) {
  return json{{"step", s.step}, {"lr", s.lr}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps}};
}

void adam_from(const json& j, AdamState& s) {
  s.step = j.at("step").get<std::int64_t>();
  s.lr = j.at("lr").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  const Vector blocks[] = {c.velocity.flatten(), c.growth.flatten(), c.adam_velocity.m,
                           c.adam_velocity.v,    c.adam_growth.m,    c.adam_growth.v};
  const char* names[] = {"velocity", "growth", "adam_velocity_m", "adam_velocity_v", "adam_growth_m", "adam_growth_v"};
  if (blocks[2].size() != blocks[0].size() || blocks[3].size() != blocks[0].size() ||
      blocks[4].size() != blocks[1].size() || blocks[5].size() != blocks[1].size())
    throw ValidationError("checkpoint: optimizer state does not match the networks");

  json layout = json::array();
  std::int64_t offset = 0;
  for (int b = 0; b < 6; ++b) {
    layout.push_back(json{{"name", names[b]}, {"offset", offset}, {"count", blocks[b].size()}});
    offset += blocks[b].size();
  }
  json header{{"format", "vgfm-checkpoint"},
              {"version", 1},
              {"step", c.step},
              {"seed", c.seed},
              {"phase", c.phase},
              {"rng_state", c.rng_state},
              {"velocity", arch_json(c.velocity.arch)},
              {"growth", arch_json(c.growth.arch)},
              {"adam_velocity", adam_json(c.adam_velocity)},
              {"adam_growth", adam_json(c.adam_growth)},
              {"blocks", layout},
              {"config", json::parse(c.config_json)}};
  const std::string h = header.dump();
  std::string out(kMagic, kMagicLen);
  put_u64(out, h.size());
  out += h;
  for (const Vector& b : blocks) put_doubles(out, b);
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kMagic) != 0)
    throw ParseError("not a checkpoint file (bad magic)");
  const std::uint64_t hlen = get_u64(bytes, kMagicLen);
  const std::size_t hstart = kMagicLen + 8;
  if (hlen > bytes.size() - hstart) throw ParseError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(hstart, hlen));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint c;
  try {
    if (header.at("version").get<int>() != 1) throw ParseError("checkpoint: unsupported version");
    c.step = header.at("step").get<std::int64_t>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.phase = header.at("phase").get<std::string>();
    c.rng_state = header.at("rng_state").get<std::string>();
    c.config_json = header.at("config").dump();
    c.velocity = shaped(arch_from(header.at("velocity")));
    c.growth = shaped(arch_from(header.at("growth")));
    adam_from(header.at("adam_velocity"), c.adam_velocity);
    adam_from(header.at("adam_growth"), c.adam_growth);

    const std::size_t data_start = hstart + hlen;
    std::vector<Vector> blocks;
    for (const auto& b : header.at("blocks")) {
      const auto off = b.at("offset").get<std::uint64_t>();
      const auto cnt = b.at("count").get<std::uint64_t>();
      if (data_start + 8 * (off + cnt) > bytes.size()) throw ParseError("checkpoint: truncated parameter block");
      Vector v(static_cast<Eigen::Index>(cnt));
      for (std::uint64_t k = 0; k < cnt; ++k)
        v(static_cast<Eigen::Index>(k)) = std::bit_cast<double>(get_u64(bytes, data_start + 8 * (off + k)));
      blocks.push_back(std::move(v));
    }
    if (blocks.size() != 6) throw ParseError("checkpoint: expected 6 parameter blocks");
    c.velocity.assign(blocks[0]);
    c.growth.assign(blocks[1]);
    c.adam_velocity.m = blocks[2];
    c.adam_velocity.v = blocks[3];
    c.adam_growth.m = blocks[4];
    c.adam_growth.v = blocks[5];
    if (blocks[2].size() != blocks[0].size() || blocks[4].size() != blocks[1].size())
      throw ParseError("checkpoint: optimizer block size mismatch");
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace vgfm::nets
