#include "cliplab/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cliplab/error.hpp"

namespace cliplab {

namespace {

constexpr std::size_t kMaxSharedRows = std::size_t{1} << 22;

std::size_t checked_pow(std::size_t base, int exp) {
  std::size_t out = 1;
  for (int i = 0; i < exp; ++i) {
    if (out > kMaxSharedRows / base) return kMaxSharedRows + 1;
    out *= base;
  }
  return out;
}

}  // namespace

std::uint64_t prompt_key(std::span<const int> prompt) {
  std::uint64_t h = mix64(prompt.size());
  for (int t : prompt) h = hash_combine(h, static_cast<std::uint64_t>(t + 1));
  return h;
}

Context make_context(std::span<const int> prompt, std::span<const int> response_prefix,
                     int window) {
  Context ctx;
  ctx.prompt_key = prompt_key(prompt);
  ctx.position = static_cast<std::uint32_t>(response_prefix.size());
  ctx.window.assign(static_cast<std::size_t>(window), kPadToken);
  // Fill from the newest token backwards.
  std::size_t slot = ctx.window.size();
  for (auto it = response_prefix.rbegin(); it != response_prefix.rend() && slot > 0; ++it) {
    ctx.window[--slot] = *it;
  }
  for (auto it = prompt.rbegin(); it != prompt.rend() && slot > 0; ++it) {
    ctx.window[--slot] = *it;
  }
  return ctx;
}

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::Tabular ? "tabular" : "feedforward";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "tabular") return ModelKind::Tabular;
  if (text == "feedforward") return ModelKind::Feedforward;
  throw InvalidInput("unknown model kind '" + std::string(text) + "'");
}

void ModelShape::validate() const {
  if (vocab_size < 1) throw InvalidInput("model: vocab_size must be positive");
  if (context_window < 1) throw InvalidInput("model: context_window must be positive");
  if (kind == ModelKind::Tabular) {
    if (checked_pow(static_cast<std::size_t>(vocab_size) + 1, context_window) > kMaxSharedRows) {
      throw InvalidInput("model: (vocab_size+1)^context_window exceeds the tabular row limit");
    }
  } else if (hidden < 1) {
    throw InvalidInput("model: hidden width must be positive");
  }
}

PolicyModel::PolicyModel(ModelShape shape, std::vector<double> params)
    : shape_(shape), params_(std::move(params)) {}

PolicyModel PolicyModel::tabular(int vocab_size, int context_window, std::size_t prompt_rows) {
  ModelShape shape{ModelKind::Tabular, vocab_size, context_window, prompt_rows, 0};
  shape.validate();
  const std::size_t rows =
      checked_pow(static_cast<std::size_t>(vocab_size) + 1, context_window) + prompt_rows;
  return PolicyModel(shape, std::vector<double>(rows * static_cast<std::size_t>(vocab_size), 0.0));
}

PolicyModel PolicyModel::feedforward(int vocab_size, int context_window, int hidden,
                                     SeededRng& init) {
  ModelShape shape{ModelKind::Feedforward, vocab_size, context_window, 0, hidden};
  shape.validate();
  const std::size_t d = static_cast<std::size_t>(context_window) * (vocab_size + 1);
  const std::size_t h = static_cast<std::size_t>(hidden);
  const std::size_t v = static_cast<std::size_t>(vocab_size);
  std::vector<double> params(h * d + h + v * h + v);
  for (double& p : params) p = init.uniform(-0.05, 0.05);
  return PolicyModel(shape, std::move(params));
}

PolicyModel PolicyModel::from_shape(const ModelShape& shape, SeededRng& init) {
  if (shape.kind == ModelKind::Tabular) {
    return tabular(shape.vocab_size, shape.context_window, shape.prompt_rows);
  }
  return feedforward(shape.vocab_size, shape.context_window, shape.hidden, init);
}

void PolicyModel::check_context(const Context& ctx) const {
  if (ctx.window.size() != static_cast<std::size_t>(shape_.context_window)) {
    throw InvalidInput("context window length does not match the model");
  }
  for (int t : ctx.window) {
    if (t != kPadToken && (t < 0 || t >= shape_.vocab_size)) {
      throw InvalidInput("context token out of range");
    }
  }
}

std::size_t PolicyModel::shared_rows() const {
  return checked_pow(static_cast<std::size_t>(shape_.vocab_size) + 1, shape_.context_window);
}

std::size_t PolicyModel::shared_row(const Context& ctx) const {
  std::size_t row = 0;
  const std::size_t base = static_cast<std::size_t>(shape_.vocab_size) + 1;
  for (int t : ctx.window) row = row * base + static_cast<std::size_t>(t + 1);
  return row;
}

std::array<std::size_t, 2> PolicyModel::prompt_rows(const Context& ctx) const {
  std::uint64_t h = hash_combine(ctx.prompt_key, ctx.position);
  for (int t : ctx.window) h = hash_combine(h, static_cast<std::uint64_t>(t + 1));
  const std::size_t base = shared_rows();
  const std::uint64_t n = shape_.prompt_rows;
  return {base + static_cast<std::size_t>(h % n),
          base + static_cast<std::size_t>(mix64(h ^ 0x5bd1e9955bd1e995ULL) % n)};
}

std::size_t PolicyModel::input_dim() const {
  return static_cast<std::size_t>(shape_.context_window) * (shape_.vocab_size + 1);
}

void PolicyModel::forward_hidden(const Context& ctx, std::vector<double>& hidden) const {
  const std::size_t d = input_dim();
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t sym = static_cast<std::size_t>(shape_.vocab_size) + 1;
  MatrixView<const double> w1{params_.data(), h, d};
  const double* b1 = params_.data() + h * d;
  hidden.assign(b1, b1 + h);
  for (std::size_t slot = 0; slot < ctx.window.size(); ++slot) {
    const std::size_t col = slot * sym + static_cast<std::size_t>(ctx.window[slot] + 1);
    for (std::size_t r = 0; r < h; ++r) hidden[r] += w1(r, col);
  }
  for (double& x : hidden) x = std::tanh(x);
}

std::vector<double> PolicyModel::logits(const Context& ctx) const {
  check_context(ctx);
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  std::vector<double> out(v);
  if (shape_.kind == ModelKind::Tabular) {
    const double* row = params_.data() + shared_row(ctx) * v;
    std::copy(row, row + v, out.begin());
    if (shape_.prompt_rows > 0) {
      for (std::size_t r : prompt_rows(ctx)) {
        const double* extra = params_.data() + r * v;
        for (std::size_t a = 0; a < v; ++a) out[a] += extra[a];
      }
    }
    return out;
  }
  std::vector<double> hidden;
  forward_hidden(ctx, hidden);
  const std::size_t h = hidden.size();
  const std::size_t off = h * input_dim() + h;
  MatrixView<const double> w2{params_.data() + off, v, h};
  matvec(w2, hidden, out);
  const double* b2 = params_.data() + off + v * h;
  for (std::size_t a = 0; a < v; ++a) out[a] += b2[a];
  return out;
}

std::vector<double> PolicyModel::log_probs(const Context& ctx) const {
  return log_softmax(logits(ctx));
}

ProbDist PolicyModel::distribution(const Context& ctx) const { return softmax(logits(ctx)); }

double PolicyModel::logprob(const Context& ctx, int action) const {
  if (action < 0 || action >= shape_.vocab_size) throw InvalidInput("logprob: action out of range");
  return log_probs(ctx)[static_cast<std::size_t>(action)];
}

void PolicyModel::accumulate_grad(const Context& ctx, int action, double scale,
                                  std::span<double> grad) const {
  if (action < 0 || action >= shape_.vocab_size) {
    throw InvalidInput("backprop: action out of range");
  }
  if (grad.size() != params_.size()) throw InvalidInput("backprop: gradient size mismatch");
  if (scale == 0.0) return;
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  const ProbDist pi = distribution(ctx);
  // Gradient at the logit layer: scale * (onehot(a) - pi).
  std::vector<double> g(v);
  for (std::size_t b = 0; b < v; ++b) g[b] = -scale * pi[b];
  g[static_cast<std::size_t>(action)] += scale;

  if (shape_.kind == ModelKind::Tabular) {
    axpy(1.0, g, grad.subspan(shared_row(ctx) * v, v));
    if (shape_.prompt_rows > 0) {
      for (std::size_t r : prompt_rows(ctx)) axpy(1.0, g, grad.subspan(r * v, v));
    }
    return;
  }

  std::vector<double> hidden;
  forward_hidden(ctx, hidden);
  const std::size_t h = hidden.size();
  const std::size_t d = input_dim();
  const std::size_t w2_off = h * d + h;
  const std::size_t b2_off = w2_off + v * h;
  MatrixView<double> dw2{grad.data() + w2_off, v, h};
  for (std::size_t b = 0; b < v; ++b) {
    axpy(g[b], hidden, dw2.row(b));
    grad[b2_off + b] += g[b];
  }
  std::vector<double> g_hidden(h);
  matvec_transposed(MatrixView<const double>{params_.data() + w2_off, v, h}, g, g_hidden);
  for (std::size_t r = 0; r < h; ++r) g_hidden[r] *= 1.0 - hidden[r] * hidden[r];
  MatrixView<double> dw1{grad.data(), h, d};
  const std::size_t sym = static_cast<std::size_t>(shape_.vocab_size) + 1;
  for (std::size_t slot = 0; slot < ctx.window.size(); ++slot) {
    const std::size_t col = slot * sym + static_cast<std::size_t>(ctx.window[slot] + 1);
    for (std::size_t r = 0; r < h; ++r) dw1(r, col) += g_hidden[r];
  }
  axpy(1.0, g_hidden, grad.subspan(h * d, h));
}

std::vector<double> PolicyModel::backprop_token(const Context& ctx, int action,
                                                double scale) const {
  std::vector<double> grad(params_.size(), 0.0);
  accumulate_grad(ctx, action, scale, grad);
  return grad;
}

std::string_view to_string(Termination t) {
  return t == Termination::AnswerEmitted ? "answer-emitted" : "max-length";
}

std::size_t Group::token_count() const {
  std::size_t n = 0;
  for (const Trajectory& t : trajectories) n += t.length();
  return n;
}

Group sample_group(const PolicyModel& model, const TaskSpec& task, int group_size, int max_len,
                   double temperature, SeededRng& rng) {
  if (group_size < 1) throw InvalidInput("sample_group: group size must be positive");
  if (max_len < 1) throw InvalidInput("sample_group: max_len must be >= 1");
  if (!(temperature > 0.0)) throw InvalidInput("sample_group: temperature must be positive");
  Group group;
  group.prompt_id = task.id;
  group.trajectories.reserve(static_cast<std::size_t>(group_size));
  std::vector<double> weights;
  for (int j = 0; j < group_size; ++j) {
    Trajectory traj;
    traj.prompt_id = task.id;
    while (static_cast<int>(traj.tokens.size()) < max_len) {
      Context ctx = make_context(task.prompt_tokens, traj.tokens, model.context_window());
      const std::vector<double> logits = model.logits(ctx);
      const std::vector<double> logp = log_softmax(logits);
      if (temperature == 1.0) {
        weights.resize(logp.size());
        for (std::size_t a = 0; a < logp.size(); ++a) weights[a] = std::exp(logp[a]);
      } else {
        std::vector<double> scaled(logits);
        for (double& x : scaled) x /= temperature;
        weights = softmax(scaled).p;
      }
      const int action = static_cast<int>(rng.categorical(weights));
      traj.tokens.push_back(action);
      traj.contexts.push_back(std::move(ctx));
      traj.logp_old.push_back(logp[static_cast<std::size_t>(action)]);
      if (response_complete(task, traj.tokens)) {
        traj.terminated = Termination::AnswerEmitted;
        break;
      }
    }
    group.trajectories.push_back(std::move(traj));
  }
  return group;
}

Trajectory score_response_tokens(const PolicyModel& model, const TaskSpec& task,
                                 std::span<const int> response) {
  if (response.empty()) throw InvalidInput("score_response_tokens: empty response");
  Trajectory traj;
  traj.prompt_id = task.id;
  for (std::size_t t = 0; t < response.size(); ++t) {
    Context ctx = make_context(task.prompt_tokens, response.first(t), model.context_window());
    traj.logp_old.push_back(model.logprob(ctx, response[t]));
    traj.contexts.push_back(std::move(ctx));
    traj.tokens.push_back(response[t]);
  }
  traj.terminated = response_complete(task, response) ? Termination::AnswerEmitted
                                                      : Termination::MaxLength;
  return traj;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw InvalidInput("unknown optimizer '" + std::string(text) + "'");
}

OptimizerState make_optimizer_state(const OptimizerConfig& config, std::size_t parameter_count) {
  OptimizerState state;
  state.config = config;
  if (config.kind == OptimizerKind::Adam) {
    state.first_moment.assign(parameter_count, 0.0);
    state.second_moment.assign(parameter_count, 0.0);
  }
  return state;
}

void apply_update(PolicyModel& model, std::span<const double> gradient, OptimizerState& state,
                  double lr) {
  if (gradient.size() != model.parameter_count()) {
    throw InvalidInput("apply_update: gradient length does not match parameter count");
  }
  if (!all_finite(gradient)) {
    ++state.rejected_updates;
    throw UpdateRejected("apply_update: non-finite gradient, step skipped");
  }
  std::span<double> theta = model.mutable_parameters();
  if (state.config.kind == OptimizerKind::Sgd) {
    axpy(-lr, gradient, theta);
    ++state.step;
    return;
  }
  if (state.first_moment.size() != theta.size()) {
    state.first_moment.assign(theta.size(), 0.0);
    state.second_moment.assign(theta.size(), 0.0);
  }
  ++state.step;
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = gradient[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    if (g == 0.0 && m == 0.0 && v == 0.0) continue;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    theta[i] -= lr * (m / c1) / (std::sqrt(v / c2) + state.config.epsilon);
  }
}

namespace {

std::string encode_doubles(std::span<const double> values) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.resize(values.size() * 16);
  std::size_t pos = 0;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 60; shift >= 0; shift -= 4) out[pos++] = kHex[(bits >> shift) & 0xF];
  }
  return out;
}

std::vector<double> decode_doubles(const std::string& text) {
  if (text.size() % 16 != 0) throw InvalidInput("checkpoint: malformed parameter blob");
  std::vector<double> out(text.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < 16; ++k) {
      const char c = text[i * 16 + k];
      int nibble;
      if (c >= '0' && c <= '9') nibble = c - '0';
      else if (c >= 'a' && c <= 'f') nibble = c - 'a' + 10;
      else throw InvalidInput("checkpoint: bad hex digit");
      bits = (bits << 4) | static_cast<std::uint64_t>(nibble);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

// Long vectors are mostly exact +0.0 (untouched table rows), so they are stored as
// {"size": n, "runs": [[offset, hex], ...]} listing only the nonzero stretches.
nlohmann::json encode_sparse(std::span<const double> values) {
  nlohmann::json runs = nlohmann::json::array();
  std::size_t i = 0;
  while (i < values.size()) {
    if (std::bit_cast<std::uint64_t>(values[i]) == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < values.size() && std::bit_cast<std::uint64_t>(values[j]) != 0) ++j;
    runs.push_back({i, encode_doubles(values.subspan(i, j - i))});
    i = j;
  }
  return {{"size", values.size()}, {"runs", std::move(runs)}};
}

std::vector<double> decode_sparse(const nlohmann::json& j) {
  std::vector<double> out(j.at("size").get<std::size_t>(), 0.0);
  for (const auto& run : j.at("runs")) {
    const std::size_t offset = run.at(0).get<std::size_t>();
    const std::vector<double> chunk = decode_doubles(run.at(1).get<std::string>());
    if (offset + chunk.size() > out.size()) throw InvalidInput("checkpoint: run out of bounds");
    std::copy(chunk.begin(), chunk.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const ModelShape& s = ckpt.model.shape();
  nlohmann::json j = {
      {"format", kCheckpointFormat},
      {"step", ckpt.step},
      {"model",
       {{"kind", to_string(s.kind)},
        {"vocab_size", s.vocab_size},
        {"context_window", s.context_window},
        {"prompt_rows", s.prompt_rows},
        {"hidden", s.hidden},
        {"parameter_count", ckpt.model.parameter_count()},
        {"parameters", encode_sparse(ckpt.model.parameters())}}},
      {"optimizer",
       {{"kind", to_string(ckpt.optimizer.config.kind)},
        {"beta1", encode_doubles(std::span(&ckpt.optimizer.config.beta1, 1))},
        {"beta2", encode_doubles(std::span(&ckpt.optimizer.config.beta2, 1))},
        {"epsilon", encode_doubles(std::span(&ckpt.optimizer.config.epsilon, 1))},
        {"step", ckpt.optimizer.step},
        {"rejected_updates", ckpt.optimizer.rejected_updates},
        {"first_moment", encode_sparse(ckpt.optimizer.first_moment)},
        {"second_moment", encode_sparse(ckpt.optimizer.second_moment)}}},
      {"rng", {{"algorithm", ckpt.rng_algorithm}, {"seed", ckpt.rng_seed}, {"stream", ckpt.rng_stream}}},
  };
  out << j.dump() << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
  nlohmann::json j;
  in >> j;
  if (j.value("format", std::string{}) != kCheckpointFormat) {
    throw InvalidInput("checkpoint: missing or unsupported format tag");
  }
  const auto& m = j.at("model");
  ModelShape shape;
  shape.kind = parse_model_kind(m.at("kind").get<std::string>());
  shape.vocab_size = m.at("vocab_size").get<int>();
  shape.context_window = m.at("context_window").get<int>();
  shape.prompt_rows = m.at("prompt_rows").get<std::size_t>();
  shape.hidden = m.at("hidden").get<int>();
  SeededRng unused(0, 0);
  PolicyModel model = PolicyModel::from_shape(shape, unused);
  std::vector<double> params = decode_sparse(m.at("parameters"));
  if (params.size() != model.parameter_count()) {
    throw InvalidInput("checkpoint: parameter count does not match the model shape");
  }
  std::copy(params.begin(), params.end(), model.mutable_parameters().begin());

  const auto& o = j.at("optimizer");
  OptimizerState opt;
  opt.config.kind = parse_optimizer_kind(o.at("kind").get<std::string>());
  opt.config.beta1 = decode_doubles(o.at("beta1").get<std::string>()).at(0);
  opt.config.beta2 = decode_doubles(o.at("beta2").get<std::string>()).at(0);
  opt.config.epsilon = decode_doubles(o.at("epsilon").get<std::string>()).at(0);
  opt.step = o.at("step").get<std::uint64_t>();
  opt.rejected_updates = o.at("rejected_updates").get<std::uint64_t>();
  opt.first_moment = decode_sparse(o.at("first_moment"));
  opt.second_moment = decode_sparse(o.at("second_moment"));

  const auto& r = j.at("rng");
  return Checkpoint{std::move(model), std::move(opt), r.at("seed").get<std::uint64_t>(),
                    r.at("stream").get<std::uint64_t>(), r.at("algorithm").get<std::string>(),
                    j.at("step").get<std::uint64_t>()};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open checkpoint for writing: " + tmp.string());
    write_checkpoint(out, ckpt);
    if (!out) throw InvalidInput("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace cliplab
