#pragma once

// One-hidden-layer ReLU MLP with softmax output, trained by Adam on mean
// cross-entropy. Templated on the scalar type; training runs in double and
// the final weights are rounded to f32 so the persisted model reproduces the
// in-memory one exactly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "factify/embedding_cache.hpp"
#include "factify/error.hpp"
#include "factify/rng.hpp"

namespace factify::mlp {

struct MlpConfig {
  int input_dim = 0;
  int hidden_dim = 100;
  int output_dim = 3;
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int batch_size = 32;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Multiplies the uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization.
  double init_scale = 1.0;
  // Early stopping on a seeded holdout carved from the training examples; 0 disables.
  double holdout_fraction = 0.1;
  int patience = 10;
};

inline void validate(const MlpConfig& c) {
  if (c.input_dim <= 0 || c.hidden_dim <= 0) throw Error(ErrorKind::ConfigInvalid, "mlp dims must be positive");
  if (c.output_dim != 3 && c.output_dim != 5) throw Error(ErrorKind::ConfigInvalid, "mlp output_dim must be 3 or 5");
  if (!(c.learning_rate > 0.0)) throw Error(ErrorKind::ConfigInvalid, "mlp learning_rate must be positive");
  if (c.max_epochs <= 0 || c.batch_size <= 0) throw Error(ErrorKind::ConfigInvalid, "mlp epochs/batch must be positive");
  if (c.holdout_fraction < 0.0 || c.holdout_fraction >= 1.0) {
    throw Error(ErrorKind::ConfigInvalid, "mlp holdout_fraction must be in [0, 1)");
  }
  if (c.patience <= 0) throw Error(ErrorKind::ConfigInvalid, "mlp patience must be positive");
}

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Params {
  Matrix<Scalar> w1;  // hidden x input
  Vector<Scalar> b1;  // hidden
  Matrix<Scalar> w2;  // output x hidden
  Vector<Scalar> b2;  // output

  static Params zeros(const MlpConfig& c) {
    return {Matrix<Scalar>::Zero(c.hidden_dim, c.input_dim), Vector<Scalar>::Zero(c.hidden_dim),
            Matrix<Scalar>::Zero(c.output_dim, c.hidden_dim), Vector<Scalar>::Zero(c.output_dim)};
  }

  bool operator==(const Params& o) const { return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2; }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(w1.data(), w1.size());
    fn(b1.data(), b1.size());
    fn(w2.data(), w2.size());
    fn(b2.data(), b2.size());
  }
};

template <typename Scalar>
bool shapes_match(const MlpConfig& c, const Params<Scalar>& p) {
  return p.w1.rows() == c.hidden_dim && p.w1.cols() == c.input_dim && p.b1.size() == c.hidden_dim &&
         p.w2.rows() == c.output_dim && p.w2.cols() == c.hidden_dim && p.b2.size() == c.output_dim;
}

template <typename Scalar>
Params<Scalar> init_params(const MlpConfig& c, Rng& rng) {
  Params<Scalar> p = Params<Scalar>::zeros(c);
  auto fill = [&](Scalar* data, Eigen::Index n, int fan_in) {
    const double bound = c.init_scale * std::sqrt(1.0 / fan_in);
    for (Eigen::Index i = 0; i < n; ++i) data[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  };
  fill(p.w1.data(), p.w1.size(), c.input_dim);
  fill(p.b1.data(), p.b1.size(), c.input_dim);
  fill(p.w2.data(), p.w2.size(), c.hidden_dim);
  fill(p.b2.data(), p.b2.size(), c.hidden_dim);
  return p;
}

struct EntailmentProbs {
  std::vector<double> probs;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// Numerically stable softmax (max-shifted).
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

template <typename Scalar>
std::vector<double> logits(const Params<Scalar>& p, std::span<const double> x) {
  Vector<Scalar> in(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) in[static_cast<Eigen::Index>(i)] = static_cast<Scalar>(x[i]);
  const Vector<Scalar> hidden = (p.w1 * in + p.b1).cwiseMax(Scalar(0));
  const Vector<Scalar> z = p.w2 * hidden + p.b2;
  return std::vector<double>(z.data(), z.data() + z.size());
}

template <typename Scalar>
EntailmentProbs forward(const MlpConfig& c, const Params<Scalar>& p, std::span<const double> x) {
  if (static_cast<int>(x.size()) != c.input_dim) {
    throw Error(ErrorKind::ShapeMismatch,
                "mlp input length " + std::to_string(x.size()) + ", expected " + std::to_string(c.input_dim));
  }
  if (!shapes_match(c, p)) throw Error(ErrorKind::ShapeMismatch, "mlp parameter shapes do not match config");
  const auto z = logits(p, x);
  return {softmax(z)};
}

/// Mean cross-entropy over the rows of `inputs`; fills `grad` when non-null.
template <typename Scalar>
Scalar loss_and_gradients(const Params<Scalar>& p, const Matrix<Scalar>& inputs, std::span<const int> targets,
                          Params<Scalar>* grad) {
  const Eigen::Index n = inputs.rows();
  Matrix<Scalar> pre = inputs * p.w1.transpose();
  pre.rowwise() += p.b1.transpose();
  const Matrix<Scalar> hidden = pre.cwiseMax(Scalar(0));
  Matrix<Scalar> z = hidden * p.w2.transpose();
  z.rowwise() += p.b2.transpose();

  Matrix<Scalar> probs(z.rows(), z.cols());
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar m = z.row(i).maxCoeff();
    const auto shifted = (z.row(i).array() - m).eval();
    const Scalar log_sum = std::log(shifted.exp().sum());
    probs.row(i) = (shifted - log_sum).exp().matrix();
    loss -= shifted(targets[static_cast<std::size_t>(i)]) - log_sum;
  }
  loss /= static_cast<Scalar>(n);

  if (grad != nullptr) {
    Matrix<Scalar> dz = probs;
    for (Eigen::Index i = 0; i < n; ++i) dz(i, targets[static_cast<std::size_t>(i)]) -= Scalar(1);
    dz /= static_cast<Scalar>(n);
    grad->w2 = dz.transpose() * hidden;
    grad->b2 = dz.colwise().sum().transpose();
    Matrix<Scalar> dh = dz * p.w2;
    dh = dh.cwiseProduct((pre.array() > Scalar(0)).template cast<Scalar>().matrix());
    grad->w1 = dh.transpose() * inputs;
    grad->b1 = dh.colwise().sum().transpose();
  }
  return loss;
}

struct Example {
  std::vector<double> input;
  int target = 0;
};

struct TrainingLog {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;    // full training-set loss after each epoch
  std::vector<double> holdout_losses;  // empty when early stopping is disabled
  int best_epoch = -1;
  std::size_t train_rows = 0;
  std::size_t holdout_rows = 0;
  std::vector<std::string> warnings;
};

template <typename Scalar>
struct TrainResult {
  Params<Scalar> params;
  TrainingLog log;
};

template <typename Scalar>
class Adam {
 public:
  Adam(const MlpConfig& c, const Params<Scalar>& like)
      : c_(c), m_(Params<Scalar>::zeros(c)), v_(Params<Scalar>::zeros(c)) {
    (void)like;
  }

  void step(Params<Scalar>& p, const Params<Scalar>& g) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(c_.beta1);
    const Scalar b2 = static_cast<Scalar>(c_.beta2);
    const Scalar correction1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t_));
    const Scalar correction2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t_));
    const Scalar lr = static_cast<Scalar>(c_.learning_rate);
    const Scalar eps = static_cast<Scalar>(c_.epsilon);
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = b1 * m + (Scalar(1) - b1) * grad;
      v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
    };
    update(p.w1, g.w1, m_.w1, v_.w1);
    update(p.b1, g.b1, m_.b1, v_.b1);
    update(p.w2, g.w2, m_.w2, v_.w2);
    update(p.b2, g.b2, m_.b2, v_.b2);
  }

 private:
  MlpConfig c_;
  Params<Scalar> m_;
  Params<Scalar> v_;
  long t_ = 0;
};

template <typename Scalar>
Matrix<Scalar> gather_rows(const std::vector<Example>& examples, std::span<const std::size_t> idx, int dim) {
  Matrix<Scalar> m(static_cast<Eigen::Index>(idx.size()), dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& in = examples[idx[r]].input;
    for (int k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(r), k) = static_cast<Scalar>(in[static_cast<std::size_t>(k)]);
  }
  return m;
}

inline std::vector<int> gather_targets(const std::vector<Example>& examples, std::span<const std::size_t> idx) {
  std::vector<int> t(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) t[r] = examples[idx[r]].target;
  return t;
}

template <typename Scalar>
void round_to_f32(Params<Scalar>& p) {
  p.for_each_block([](Scalar* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) data[i] = static_cast<Scalar>(static_cast<float>(data[i]));
  });
}

/// Seeded minibatch Adam. Deterministic: identical (config, examples) give
/// bit-identical parameters. Missing categories produce a warning, not an error.
template <typename Scalar = double>
TrainResult<Scalar> train(const MlpConfig& c, const std::vector<Example>& examples) {
  validate(c);
  if (examples.empty()) throw Error(ErrorKind::DegenerateData, "no training examples");
  std::vector<bool> present(static_cast<std::size_t>(c.output_dim), false);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (static_cast<int>(e.input.size()) != c.input_dim) {
      throw Error(ErrorKind::ShapeMismatch, "example " + std::to_string(i) + " has input length " +
                                                std::to_string(e.input.size()) + ", expected " +
                                                std::to_string(c.input_dim));
    }
    if (e.target < 0 || e.target >= c.output_dim) {
      throw Error(ErrorKind::ShapeMismatch, "example " + std::to_string(i) + " target out of range");
    }
    present[static_cast<std::size_t>(e.target)] = true;
  }

  TrainResult<Scalar> result;
  TrainingLog& log = result.log;
  const auto n_present = std::count(present.begin(), present.end(), true);
  if (n_present < c.output_dim) {
    log.warnings.push_back("DegenerateData: only " + std::to_string(n_present) + " of " +
                           std::to_string(c.output_dim) + " categories present in training data");
  }

  std::vector<std::size_t> train_idx(examples.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) train_idx[i] = i;
  std::vector<std::size_t> holdout_idx;
  if (c.holdout_fraction > 0.0 && examples.size() >= 20) {
    Rng split_rng(derive_seed(c.seed, 1));
    split_rng.shuffle(train_idx);
    const auto n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(c.holdout_fraction * static_cast<double>(examples.size()))));
    holdout_idx.assign(train_idx.end() - static_cast<std::ptrdiff_t>(n_hold), train_idx.end());
    train_idx.resize(train_idx.size() - n_hold);
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(holdout_idx.begin(), holdout_idx.end());
  }
  log.train_rows = train_idx.size();
  log.holdout_rows = holdout_idx.size();

  const Matrix<Scalar> train_x = gather_rows<Scalar>(examples, train_idx, c.input_dim);
  const std::vector<int> train_y = gather_targets(examples, train_idx);
  const Matrix<Scalar> hold_x = gather_rows<Scalar>(examples, holdout_idx, c.input_dim);
  const std::vector<int> hold_y = gather_targets(examples, holdout_idx);

  Rng init_rng(derive_seed(c.seed, 0));
  Params<Scalar> params = init_params<Scalar>(c, init_rng);
  Params<Scalar> grad = Params<Scalar>::zeros(c);
  Adam<Scalar> adam(c, params);
  Rng order_rng(derive_seed(c.seed, 2));

  log.initial_loss = static_cast<double>(loss_and_gradients<Scalar>(params, train_x, train_y, nullptr));

  Params<Scalar> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < c.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(c.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(c.batch_size));
      Matrix<Scalar> bx(static_cast<Eigen::Index>(end - start), c.input_dim);
      std::vector<int> by(end - start);
      for (std::size_t r = start; r < end; ++r) {
        bx.row(static_cast<Eigen::Index>(r - start)) = train_x.row(static_cast<Eigen::Index>(order[r]));
        by[r - start] = train_y[order[r]];
      }
      loss_and_gradients<Scalar>(params, bx, by, &grad);
      adam.step(params, grad);
    }
    log.epoch_losses.push_back(static_cast<double>(loss_and_gradients<Scalar>(params, train_x, train_y, nullptr)));

    if (!holdout_idx.empty()) {
      const double hl = static_cast<double>(loss_and_gradients<Scalar>(params, hold_x, hold_y, nullptr));
      log.holdout_losses.push_back(hl);
      if (hl < best_loss) {
        best_loss = hl;
        best = params;
        log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= c.patience) {
        break;
      }
    }
  }
  if (holdout_idx.empty()) {
    log.best_epoch = static_cast<int>(log.epoch_losses.size()) - 1;
  } else {
    params = best;
  }
  round_to_f32(params);
  result.params = std::move(params);
  return result;
}

// Model file: text header of key=value lines closed by an empty line, then
// W1, b1, W2, b2 as (u32 rows, u32 cols, rows*cols little-endian f32, row-major).

inline constexpr std::string_view kModelMagic = "FACTIFY-MLP 1";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Scalar>
std::vector<unsigned char> serialize(const MlpConfig& c, const Params<Scalar>& p,
                                     const std::map<std::string, std::string>& extra = {}) {
  std::ostringstream header;
  header << kModelMagic << '\n';
  header << "input_dim=" << c.input_dim << '\n'
         << "hidden_dim=" << c.hidden_dim << '\n'
         << "output_dim=" << c.output_dim << '\n'
         << "learning_rate=" << format_double(c.learning_rate) << '\n'
         << "max_epochs=" << c.max_epochs << '\n'
         << "batch_size=" << c.batch_size << '\n'
         << "seed=" << c.seed << '\n'
         << "init_scale=" << format_double(c.init_scale) << '\n'
         << "holdout_fraction=" << format_double(c.holdout_fraction) << '\n'
         << "patience=" << c.patience << '\n';
  for (const auto& [k, v] : extra) header << k << '=' << v << '\n';
  header << '\n';
  const std::string h = header.str();
  std::vector<unsigned char> out(h.begin(), h.end());
  auto block = [&](const Scalar* data, Eigen::Index rows, Eigen::Index cols) {
    io::put_u32(out, static_cast<std::uint32_t>(rows));
    io::put_u32(out, static_cast<std::uint32_t>(cols));
    for (Eigen::Index i = 0; i < rows * cols; ++i) io::put_f32(out, static_cast<float>(data[i]));
  };
  block(p.w1.data(), p.w1.rows(), p.w1.cols());
  block(p.b1.data(), p.b1.size(), 1);
  block(p.w2.data(), p.w2.rows(), p.w2.cols());
  block(p.b2.data(), p.b2.size(), 1);
  return out;
}

template <typename Scalar>
struct LoadedModel {
  MlpConfig config;
  Params<Scalar> params;
  std::map<std::string, std::string> header;
};

template <typename Scalar = double>
LoadedModel<Scalar> deserialize(std::span<const unsigned char> bytes) {
  LoadedModel<Scalar> m;
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) throw Error(ErrorKind::Io, "truncated model header");
    std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    ++pos;
    return line;
  };
  if (next_line() != kModelMagic) throw Error(ErrorKind::Io, "not a factify MLP model file");
  for (std::string line = next_line(); !line.empty(); line = next_line()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Io, "bad model header line: " + line);
    m.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = m.header.find(key);
    if (it == m.header.end()) throw Error(ErrorKind::Io, std::string("model header missing ") + key);
    return it->second;
  };
  MlpConfig& c = m.config;
  c.input_dim = std::stoi(get("input_dim"));
  c.hidden_dim = std::stoi(get("hidden_dim"));
  c.output_dim = std::stoi(get("output_dim"));
  c.learning_rate = std::stod(get("learning_rate"));
  c.max_epochs = std::stoi(get("max_epochs"));
  c.batch_size = std::stoi(get("batch_size"));
  c.seed = std::stoull(get("seed"));
  c.init_scale = std::stod(get("init_scale"));
  c.holdout_fraction = std::stod(get("holdout_fraction"));
  c.patience = std::stoi(get("patience"));

  io::Reader r(bytes.subspan(pos));
  auto read_block = [&](Scalar* data, Eigen::Index rows, Eigen::Index cols, const char* name) {
    const auto fr = r.u32();
    const auto fc = r.u32();
    if (fr != rows || fc != cols) throw Error(ErrorKind::ShapeMismatch, std::string("model block ") + name + " shape");
    for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = static_cast<Scalar>(r.f32());
  };
  m.params = Params<Scalar>::zeros(c);
  read_block(m.params.w1.data(), c.hidden_dim, c.input_dim, "W1");
  read_block(m.params.b1.data(), c.hidden_dim, 1, "b1");
  read_block(m.params.w2.data(), c.output_dim, c.hidden_dim, "W2");
  read_block(m.params.b2.data(), c.output_dim, 1, "b2");
  if (r.remaining() != 0) throw Error(ErrorKind::Io, "trailing bytes in model file");
  return m;
}

}  // namespace factify::mlp
