#include "edt/policy.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <functional>

#include "edt/checkpoint.hpp"
#include "edt/gaussian.hpp"

namespace edt {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

double PolicyConfig::entropy_target() const {
  return std::isnan(beta) ? default_entropy_target(action_dim) : beta;
}

void PolicyConfig::validate() const {
  if (layers < 1 || heads < 1 || width < 1 || K < 1 || ffn_mult < 1) {
    throw ConfigError("policy: layers, heads, width, K and ffn_mult must be >= 1");
  }
  if (width % heads != 0) throw ConfigError("policy: width must be divisible by heads");
  if (state_dim < 1 || action_dim < 1) throw ConfigError("policy: feature widths must be >= 1");
  if (max_timestep < 1) throw ConfigError("policy: max_timestep must be >= 1");
  if (!(sigma_min > 0.0 && sigma_max > sigma_min)) {
    throw ConfigError("policy: need 0 < sigma_min < sigma_max");
  }
  if (!std::isnan(beta) && !std::isfinite(beta)) throw ConfigError("policy: beta must be finite");
}

std::map<std::string, std::string> PolicyConfig::to_metadata() const {
  std::map<std::string, std::string> m{
      {"layers", std::to_string(layers)},
      {"heads", std::to_string(heads)},
      {"width", std::to_string(width)},
      {"K", std::to_string(K)},
      {"state_dim", std::to_string(state_dim)},
      {"action_dim", std::to_string(action_dim)},
      {"max_timestep", std::to_string(max_timestep)},
      {"sigma_min", format_double(sigma_min)},
      {"sigma_max", format_double(sigma_max)},
      {"beta", format_double(entropy_target())},
      {"ffn_mult", std::to_string(ffn_mult)},
      {"seed", std::to_string(seed)},
  };
  if (fixed_logvar) m["fixed_logvar"] = format_double(*fixed_logvar);
  return m;
}

PolicyConfig PolicyConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + k + "'");
    return it->second;
  };
  auto as_int = [&](const std::string& k) {
    try {
      return std::stoll(get(k));
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint metadata '" + k + "' is not an integer");
    }
  };
  PolicyConfig c;
  c.layers = static_cast<int>(as_int("layers"));
  c.heads = static_cast<int>(as_int("heads"));
  c.width = static_cast<int>(as_int("width"));
  c.K = static_cast<int>(as_int("K"));
  c.state_dim = as_int("state_dim");
  c.action_dim = as_int("action_dim");
  c.max_timestep = static_cast<int>(as_int("max_timestep"));
  c.sigma_min = parse_double(get("sigma_min"));
  c.sigma_max = parse_double(get("sigma_max"));
  c.beta = parse_double(get("beta"));
  c.ffn_mult = static_cast<int>(as_int("ffn_mult"));
  c.seed = static_cast<std::uint64_t>(as_int("seed"));
  if (meta.count("fixed_logvar")) c.fixed_logvar = parse_double(get("fixed_logvar"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

Encoding Encoding::make(const SpaceDescriptor& states, const SpaceDescriptor& actions,
                        Index action_dim, std::uint64_t seed) {
  Encoding e;
  e.state_space = states;
  e.action_space = actions;
  if (!actions.discrete()) return e;
  if (action_dim < 1) throw ConfigError("encoding: action_dim must be >= 1");
  const Index n = actions.size;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  e.action_embedding = Matrix::Zero(n + 1, action_dim);
  if (n <= action_dim) {
    Matrix g(action_dim, action_dim);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(action_dim, action_dim);
    e.action_embedding.bottomRows(n) = q.topRows(n);
  } else {
    for (Index i = 1; i <= n; ++i) {
      RowVector r(action_dim);
      for (Index j = 0; j < action_dim; ++j) r(j) = normal(rng);
      e.action_embedding.row(i) = r.normalized();
    }
  }
  return e;
}

Index Encoding::state_dim() const {
  return state_space.discrete() ? state_space.columns * (state_space.size + 1)
                                : state_space.columns;
}

Index Encoding::action_dim() const {
  return action_space.discrete() ? action_embedding.cols() : action_space.columns;
}

RowVector Encoding::encode_state(const Eigen::Ref<const RowVector>& raw) const {
  if (raw.size() != state_space.columns) {
    throw ShapeError("encode_state: expected " + std::to_string(state_space.columns) +
                     " columns, got " + std::to_string(raw.size()));
  }
  if (!state_space.discrete()) return raw;
  const Index block = state_space.size + 1;
  RowVector out = RowVector::Zero(state_dim());
  for (Index c = 0; c < raw.size(); ++c) {
    const auto id = static_cast<Index>(std::lround(raw(c)));
    if (id < 0 || id > state_space.size) {
      throw ShapeError("encode_state: id " + std::to_string(id) + " outside 0.." +
                       std::to_string(state_space.size));
    }
    out(c * block + id) = 1.0;
  }
  return out;
}

RowVector Encoding::encode_action(const Eigen::Ref<const RowVector>& raw) const {
  if (raw.size() != action_space.columns) {
    throw ShapeError("encode_action: expected " + std::to_string(action_space.columns) +
                     " columns, got " + std::to_string(raw.size()));
  }
  if (!action_space.discrete()) return raw;
  const auto id = static_cast<Index>(std::lround(raw(0)));
  if (id < 0 || id >= action_embedding.rows()) {
    throw ShapeError("encode_action: id " + std::to_string(id) + " outside the embedding table");
  }
  return action_embedding.row(id);
}

int Encoding::decode(const Eigen::Ref<const RowVector>& action, std::span<const int> legal) const {
  if (legal.empty()) throw InvalidAction("decode: no legal successors");
  if (!action_space.discrete()) throw ConfigError("decode: action space is continuous");
  int best = legal[0];
  double best_d = std::numeric_limits<double>::infinity();
  for (int id : legal) {
    if (id < 1 || id >= action_embedding.rows()) {
      throw InvalidAction("decode: item " + std::to_string(id) + " has no embedding");
    }
    const double d = (action_embedding.row(id) - action).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Index Batch::valid_count() const {
  return static_cast<Index>(std::count(mask.begin(), mask.end(), true));
}

Policy::Policy(PolicyConfig cfg, Encoding enc) : cfg_(std::move(cfg)), enc_(std::move(enc)) {
  cfg_.state_dim = enc_.state_dim();
  cfg_.action_dim = enc_.action_dim();
  cfg_.validate();
  init_params();
}

void Policy::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](Index r, Index c, double sd) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sd * normal(rng);
    return m;
  };
  const Index w = cfg_.width;
  auto linear = [&](const std::string& name, Index in, Index out) {
    params_.add(name + ".w", randn(in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    params_.add(name + ".b", Matrix::Zero(1, out));
  };
  auto norm = [&](const std::string& name) {
    params_.add(name + ".g", Matrix::Ones(1, w));
    params_.add(name + ".b", Matrix::Zero(1, w));
  };
  linear("embed.rtg", 1, w);
  linear("embed.state", cfg_.state_dim, w);
  linear("embed.action", cfg_.action_dim, w);
  params_.add("embed.time", randn(cfg_.max_timestep + 1, w, 0.1));
  norm("embed.ln");
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    norm(p + ".ln1");
    linear(p + ".attn.q", w, w);
    linear(p + ".attn.k", w, w);
    linear(p + ".attn.v", w, w);
    linear(p + ".attn.o", w, w);
    norm(p + ".ln2");
    linear(p + ".ffn.in", w, w * cfg_.ffn_mult);
    linear(p + ".ffn.out", w * cfg_.ffn_mult, w);
  }
  norm("final.ln");
  linear("head.mean", w, cfg_.action_dim);
  linear("head.logvar", w, cfg_.action_dim);
  if (enc_.action_space.discrete()) params_.add("action_embedding", enc_.action_embedding, false);
}

Batch Policy::make_batch(std::span<const ContextWindow> windows) const {
  if (windows.empty()) throw Error("make_batch: no windows");
  Batch b;
  b.B = static_cast<Index>(windows.size());
  b.K = cfg_.K;
  const Index n = b.rows();
  b.rtg = Matrix::Zero(n, 1);
  b.states = Matrix::Zero(n, cfg_.state_dim);
  b.actions = Matrix::Zero(n, cfg_.action_dim);
  b.timesteps.assign(static_cast<std::size_t>(n), kPadTimestep);
  b.mask.assign(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < b.B; ++i) {
    const ContextWindow& w = windows[static_cast<std::size_t>(i)];
    if (w.size() != cfg_.K) {
      throw ShapeError("make_batch: window of length " + std::to_string(w.size()) +
                       ", policy expects K=" + std::to_string(cfg_.K));
    }
    for (Index k = 0; k < b.K; ++k) {
      const Index r = i * b.K + k;
      if (!w.mask(k)) continue;
      b.rtg(r, 0) = w.rtg(k);
      b.states.row(r) = enc_.encode_state(w.states.row(k));
      b.actions.row(r) = enc_.encode_action(w.actions.row(k));
      b.timesteps[static_cast<std::size_t>(r)] = w.timesteps(k);
      b.mask[static_cast<std::size_t>(r)] = true;
    }
  }
  return b;
}

namespace {

using Binder = std::function<Var(const std::string&)>;

Var linear(const Binder& p, Var x, const std::string& name) {
  return add_bias(matmul(x, p(name + ".w")), p(name + ".b"));
}

Var norm(const Binder& p, Var x, const std::string& name) {
  return layer_norm(x, p(name + ".g"), p(name + ".b"));
}

// tanh approximation of GELU; smooth everywhere, so finite differences agree.
Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  Var inner = scale(add(x, scale(mul(square(x), x), 0.044715)), c);
  return mul(scale(x, 0.5), add_scalar(tanh(inner), 1.0));
}

/// Token i may attend to token j iff both are in the same window, j <= i and j
/// is not padding. Padding tokens attend only to themselves.
Mask attention_mask(const Batch& b) {
  const Index T = 3 * b.K;
  const Index n = b.B * T;
  Mask m = Mask::Constant(n, n, false);
  for (Index w = 0; w < b.B; ++w) {
    for (Index i = 0; i < T; ++i) {
      const Index row = w * T + i;
      if (!b.mask[static_cast<std::size_t>(w * b.K + i / 3)]) {
        m(row, row) = true;
        continue;
      }
      for (Index j = 0; j <= i; ++j) {
        if (b.mask[static_cast<std::size_t>(w * b.K + j / 3)]) m(row, w * T + j) = true;
      }
    }
  }
  return m;
}

PolicyOutput forward_impl(const PolicyConfig& cfg, Tape& tape, const Batch& b, const Binder& p) {
  if (b.states.cols() != cfg.state_dim || b.actions.cols() != cfg.action_dim ||
      b.rtg.cols() != 1 || b.K != cfg.K) {
    throw ShapeError("policy forward: batch does not match the configured K/state/action widths");
  }
  const Index n = b.rows();
  const Index T = 3 * b.K;

  std::vector<int> time_ids(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    const int t = b.timesteps[static_cast<std::size_t>(r)];
    time_ids[static_cast<std::size_t>(r)] = t < 0 ? 0 : std::min(t, cfg.max_timestep - 1) + 1;
  }
  Var te = gather_rows(p("embed.time"), time_ids);
  Var g = add(linear(p, tape.constant(b.rtg), "embed.rtg"), te);
  Var s = add(linear(p, tape.constant(b.states), "embed.state"), te);
  Var a = add(linear(p, tape.constant(b.actions), "embed.action"), te);

  // Interleave into (g, s, a) per step, window-major.
  const Var parts[] = {g, s, a};
  std::vector<int> order(static_cast<std::size_t>(3 * n));
  for (Index w = 0; w < b.B; ++w)
    for (Index k = 0; k < b.K; ++k)
      for (Index type = 0; type < 3; ++type)
        order[static_cast<std::size_t>(w * T + 3 * k + type)] =
            static_cast<int>(type * n + w * b.K + k);
  Var x = norm(p, gather_rows(concat_rows(parts), order), "embed.ln");

  const Mask allowed = attention_mask(b);
  const Index dh = cfg.width / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string name = "block" + std::to_string(l);
    Var h = norm(p, x, name + ".ln1");
    Var q = linear(p, h, name + ".attn.q");
    Var k = linear(p, h, name + ".attn.k");
    Var v = linear(p, h, name + ".attn.v");
    std::vector<Var> heads;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(k, hd * dh, dh);
      Var vh = slice_cols(v, hd * dh, dh);
      Var att = masked_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), allowed);
      heads.push_back(matmul(att, vh));
    }
    x = add(x, linear(p, concat_cols(heads), name + ".attn.o"));
    h = norm(p, x, name + ".ln2");
    x = add(x, linear(p, gelu(linear(p, h, name + ".ffn.in")), name + ".ffn.out"));
  }
  x = norm(p, x, "final.ln");

  std::vector<int> state_rows(static_cast<std::size_t>(n));
  for (Index w = 0; w < b.B; ++w)
    for (Index k = 0; k < b.K; ++k)
      state_rows[static_cast<std::size_t>(w * b.K + k)] = static_cast<int>(w * T + 3 * k + 1);
  Var hs = gather_rows(x, state_rows);

  PolicyOutput out;
  out.mean = linear(p, hs, "head.mean");
  if (cfg.fixed_logvar) {
    out.logvar = tape.constant(Matrix::Constant(n, cfg.action_dim, *cfg.fixed_logvar));
  } else {
    const double lo = cfg.logvar_min(), hi = cfg.logvar_max();
    out.logvar = add_scalar(scale(tanh(linear(p, hs, "head.logvar")), 0.5 * (hi - lo)),
                            0.5 * (hi + lo));
  }
  return out;
}

}  // namespace

PolicyOutput Policy::forward(Tape& tape, const Batch& batch, ParameterSet& params) const {
  return forward_impl(cfg_, tape, batch,
                      [&](const std::string& name) { return tape.parameter(params, name); });
}

ActionDistribution Policy::predict(const ContextWindow& window) const {
  Tape tape;
  const Batch b = make_batch(std::span<const ContextWindow>(&window, 1));
  PolicyOutput out = forward_impl(cfg_, tape, b, [&](const std::string& name) {
    return tape.constant(params_.value(name));
  });
  const Index last = b.rows() - 1;
  return {out.mean.value().row(last), out.logvar.value().row(last)};
}

namespace {

std::string kind_str(const SpaceDescriptor& s) { return s.discrete() ? "discrete" : "continuous"; }

SpaceDescriptor space_from(const std::map<std::string, std::string>& meta, const std::string& p) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(p + "_" + k);
    if (it == meta.end()) throw FormatError("checkpoint metadata lacks '" + p + "_" + k + "'");
    return it->second;
  };
  SpaceDescriptor s;
  s.kind = get("kind") == "discrete" ? SpaceDescriptor::Kind::kDiscrete
                                     : SpaceDescriptor::Kind::kContinuous;
  s.size = std::stoll(get("size"));
  s.columns = std::stoll(get("columns"));
  return s;
}

}  // namespace

void Policy::save(const std::string& path, double omega) const {
  auto meta = cfg_.to_metadata();
  meta["omega"] = format_double(omega);
  meta["state_kind"] = kind_str(enc_.state_space);
  meta["state_size"] = std::to_string(enc_.state_space.size);
  meta["state_columns"] = std::to_string(enc_.state_space.columns);
  meta["action_kind"] = kind_str(enc_.action_space);
  meta["action_size"] = std::to_string(enc_.action_space.size);
  meta["action_columns"] = std::to_string(enc_.action_space.columns);
  save_parameters(path, params_, meta);
}

std::pair<Policy, double> Policy::load(const std::string& path) {
  ParameterFile f = load_parameters(path);
  Policy pol;
  pol.cfg_ = PolicyConfig::from_metadata(f.metadata);
  pol.enc_.state_space = space_from(f.metadata, "state");
  pol.enc_.action_space = space_from(f.metadata, "action");
  if (pol.enc_.action_space.discrete()) {
    if (!f.params.contains("action_embedding")) {
      throw FormatError("checkpoint lacks the action embedding table");
    }
    pol.enc_.action_embedding = f.params.value("action_embedding");
  }
  if (pol.enc_.state_dim() != pol.cfg_.state_dim || pol.enc_.action_dim() != pol.cfg_.action_dim) {
    throw FormatError("checkpoint encoding does not match its architecture header");
  }
  // Shape-check against a freshly initialised network of the same config.
  Policy ref(pol.cfg_, pol.enc_);
  for (const auto& e : ref.params_.entries()) {
    if (!f.params.contains(e.name)) throw FormatError("checkpoint lacks parameter '" + e.name + "'");
    require_same_shape(e.value, f.params.value(e.name), "checkpoint '" + e.name + "'");
  }
  if (f.params.size() != ref.params_.size()) throw FormatError("checkpoint has extra parameters");
  pol.params_ = std::move(f.params);
  auto it = f.metadata.find("omega");
  const double omega = it == f.metadata.end() ? 0.0 : parse_double(it->second);
  return {std::move(pol), omega};
}

ContextWindow inference_window(const Matrix& states, const Matrix& actions, const Vector& rtg,
                               int K) {
  const Index t = states.rows() - 1;
  if (t < 0 || actions.rows() != t || rtg.size() != t + 1) {
    throw ShapeError("inference_window: need t+1 states, t actions and t+1 RTG values");
  }
  ContextWindow w;
  w.end = t;
  w.rtg = Vector::Zero(K);
  w.states = Matrix::Zero(K, states.cols());
  w.actions = Matrix::Zero(K, actions.cols() > 0 ? actions.cols() : 1);
  w.rewards = Vector::Zero(K);
  w.timesteps = Eigen::VectorXi::Constant(K, kPadTimestep);
  w.mask = VectorX<bool>::Constant(K, false);
  for (Index k = 0; k < K; ++k) {
    const Index pos = t - K + 1 + k;
    if (pos < 0) continue;
    w.rtg(k) = rtg(pos);
    w.states.row(k) = states.row(pos);
    if (pos < t) w.actions.row(k) = actions.row(pos);
    w.timesteps(k) = static_cast<int>(pos);
    w.mask(k) = true;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

/// Row weights 1/valid_count on unmasked rows, broadcast over action columns.
Matrix position_weights(const Batch& b, Index cols) {
  const Index valid = b.valid_count();
  if (valid == 0) throw Error("loss: batch has no unmasked positions");
  Matrix w = Matrix::Zero(b.rows(), cols);
  for (Index r = 0; r < b.rows(); ++r)
    if (b.mask[static_cast<std::size_t>(r)]) w.row(r).setConstant(1.0 / static_cast<double>(valid));
  return w;
}

}  // namespace

Var gaussian_nll_loss(const PolicyOutput& out, const Batch& batch) {
  Tape& t = *out.mean.tape();
  const Matrix w = position_weights(batch, out.mean.cols());
  Var diff = sub(out.mean, t.constant(batch.actions));
  Var z2 = mul(square(diff), exp(scale(out.logvar, -1.0)));
  Var per = add_scalar(add(z2, out.logvar), kLog2Pi);
  return scale(sum(mul_const(per, w)), 0.5);
}

Var gaussian_entropy_loss(const PolicyOutput& out, const Batch& batch) {
  const Matrix w = position_weights(batch, out.logvar.cols());
  const double dims = static_cast<double>(out.logvar.cols());
  return add_scalar(scale(sum(mul_const(out.logvar, w)), 0.5), 0.5 * dims * (1.0 + kLog2Pi));
}

Var l2_action_loss(const PolicyOutput& out, const Batch& batch) {
  Tape& t = *out.mean.tape();
  const Matrix w = position_weights(batch, out.mean.cols());
  return sum(mul_const(square(sub(out.mean, t.constant(batch.actions))), w));
}

// ---------------------------------------------------------------------------
// Dual variable and the alternating update
// ---------------------------------------------------------------------------

DualVariable::DualVariable(double lambda, AdamOptions opts) : omega_(1, 1), adam_(opts) {
  set_lambda(lambda);
}

double DualVariable::lambda() const { return std::exp(omega()); }

void DualVariable::set_omega(double w) {
  if (std::isnan(w)) throw NumericError("dual: omega is NaN");
  omega_(0, 0) = std::clamp(w, kOmegaMin, kOmegaMax);
}

double DualVariable::step(double entropy, double beta) {
  if (!std::isfinite(entropy) || !std::isfinite(beta)) {
    throw NumericError("dual: non-finite entropy or beta");
  }
  const double grad = lambda() * (entropy - beta);
  adam_.step("omega", omega_, Matrix::Constant(1, 1, grad));
  set_omega(omega_(0, 0));
  return grad;
}

StepStats lagrangian_step(Policy& policy, const Batch& batch, DualVariable& dual,
                          Adam& theta_opt, const StepOptions& opts) {
  ParameterSet& params = policy.params();
  params.zero_grad();
  Tape tape;
  PolicyOutput out = policy.forward(tape, batch);
  Var nll = gaussian_nll_loss(out, batch);
  Var h = gaussian_entropy_loss(out, batch);
  Var j = opts.loss == LossKind::kNll ? nll : l2_action_loss(out, batch);
  const double lambda = opts.entropy ? dual.lambda() : 0.0;
  Var total = lambda > 0.0 ? sub(j, scale(h, lambda)) : j;

  StepStats st;
  st.loss = tape.backward(total);
  st.nll = nll.item();
  st.entropy = h.item();
  theta_opt.step(params);
  if (opts.entropy && opts.update_dual) dual.step(st.entropy, policy.config().entropy_target());
  st.lambda = opts.entropy ? dual.lambda() : 0.0;
  return st;
}

RowVector sample_action(const ActionDistribution& dist, SampleMode mode, std::mt19937_64& rng) {
  if (dist.mean.size() != dist.logvar.size()) throw ShapeError("sample_action: mean/logvar mismatch");
  if (mode == SampleMode::kMean) return dist.mean;
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector a(dist.mean.size());
  for (Index d = 0; d < a.size(); ++d) {
    a(d) = dist.mean(d) + std::exp(0.5 * dist.logvar(d)) * normal(rng);
  }
  return a;
}

}  // namespace edt
