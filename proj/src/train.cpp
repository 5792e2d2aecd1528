#include "decorfuse/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "decorfuse/error.hpp"
#include "decorfuse/parallel.hpp"

namespace decorfuse {

void optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                    double lr, double beta1, double beta2, double weight_decay) {
  if (params.size() != grads.size())
    throw Error(ErrorKind::ShapeMismatch, "optimizer: " + std::to_string(params.size()) +
                                              " params vs " + std::to_string(grads.size()) + " grads");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(ErrorKind::ShapeMismatch, "optimizer state");
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + 1e-8) + weight_decay * params[i]);
  }
}

CycleValue one_cycle(std::int64_t step, std::int64_t total_steps, double lr_max, double beta1_low,
                     double beta1_high, double peak) {
  const double start = lr_max / 10.0;
  const double end = lr_max / 1000.0;
  if (total_steps <= 1) return {start, beta1_high};
  const double x = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  auto ease = [](double a, double b, double t) {
    return b + (a - b) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  };
  if (x <= peak) {
    const double t = x / peak;
    return {ease(start, lr_max, t), ease(beta1_high, beta1_low, t)};
  }
  const double t = (x - peak) / (1.0 - peak);
  return {ease(lr_max, end, t), ease(beta1_low, beta1_high, t)};
}

namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += width;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorKind::BadFormat, "checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string save_checkpoint(Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, ckpt.config_hash);
  put_u64(out, static_cast<std::uint64_t>(ckpt.epoch));
  const std::string cfg = config_to_json(ckpt.config);
  put_u64(out, cfg.size());
  out += cfg;
  std::uint32_t sections = 0;
  ckpt.model.for_each_param([&](const std::string&, std::vector<double>&) { ++sections; });
  put_u32(out, sections);
  ckpt.model.for_each_param([&](const std::string& name, std::vector<double>& values) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, values.size());
    for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  });
  return out;
}

Checkpoint load_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw Error(ErrorKind::BadFormat, "not a checkpoint");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::BadFormat, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_hash = r.uint(8);
  ckpt.epoch = static_cast<std::int64_t>(r.uint(8));
  const auto cfg_len = r.uint(8);
  ckpt.config = config_from_json(r.take(cfg_len));
  if (config_hash(ckpt.config) != ckpt.config_hash)
    throw Error(ErrorKind::BadFormat, "embedded config does not match its hash");
  Rng rng(0);
  ckpt.model = Model::init(ckpt.config, rng);
  const auto sections = r.uint(4);
  std::uint64_t seen = 0;
  ckpt.model.for_each_param([&](const std::string& name, std::vector<double>& values) {
    if (seen++ >= sections) throw Error(ErrorKind::BadFormat, "missing section " + name);
    const auto name_len = r.uint(4);
    if (r.take(name_len) != name) throw Error(ErrorKind::BadFormat, "expected section " + name);
    if (r.uint(8) != values.size()) throw Error(ErrorKind::BadFormat, "size mismatch in " + name);
    for (double& v : values) v = std::bit_cast<double>(r.uint(8));
  });
  if (seen != sections || !r.done()) throw Error(ErrorKind::BadFormat, "trailing checkpoint data");
  return ckpt;
}

namespace {

void accumulate(LossReport& sum, const LossReport& x) {
  sum.l_heatmap += x.l_heatmap;
  sum.l_query += x.l_query;
  sum.l_cls += x.l_cls;
  sum.l_reg += x.l_reg;
  sum.total += x.total;
  sum.w = x.w;
}

void scale(LossReport& r, double s) {
  r.l_heatmap *= s;
  r.l_query *= s;
  r.l_cls *= s;
  r.l_reg *= s;
  r.total *= s;
}

constexpr std::uint64_t kDropoutStream = 0x64726f706f7574ULL;

}  // namespace

TrainResult train(const Config& config, std::span<const SyntheticScene> scenes) {
  config.validate();
  if (scenes.empty()) throw Error(ErrorKind::InvalidConfig, "training needs at least one scene");

  TrainResult result;
  result.checkpoint.config = config;
  result.checkpoint.config_hash = config_hash(config);
  Rng init_rng(config.seed);
  Model& model = result.checkpoint.model;
  model = Model::init(config, init_rng);
  Model grads = model.zeros_like();

  std::vector<std::vector<double>*> params, grad_refs;
  std::vector<bool> is_backbone;
  model.for_each_param([&](const std::string& name, std::vector<double>& p) {
    params.push_back(&p);
    is_backbone.push_back(name.rfind("backbone2d.", 0) == 0);
  });
  grads.for_each_param([&](const std::string&, std::vector<double>& g) { grad_refs.push_back(&g); });
  std::vector<AdamState> states(params.size());
  const bool train_backbone = config.ablation.decoration && config.ablation.e2e;

  const auto bank = build_gt_bank(scenes);
  const std::int64_t total_steps = static_cast<std::int64_t>(config.epochs) *
                                   static_cast<std::int64_t>(scenes.size());
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.gt_paste = fading_schedule(epoch, config.epochs, config.fade_epochs);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      Rng paste_rng(hash_combine(hash_combine(config.seed, static_cast<std::uint64_t>(epoch)), s));
      const SyntheticScene scene = gt_paste(scenes[s], bank, paste_rng, log.gt_paste, config.paste_per_scene);
      log.pasted += static_cast<int>(scene.gt.size() - scenes[s].gt.size());

      for (auto* g : grad_refs) std::fill(g->begin(), g->end(), 0.0);
      const std::uint64_t dropout_seed =
          hash_combine(hash_combine(config.seed, kDropoutStream), static_cast<std::uint64_t>(step));
      const LossReport report = model_loss_backward(model, config, scene, dropout_seed, grads);
      const CycleValue cyc = one_cycle(step, total_steps, config.lr_max, config.beta1_low, config.beta1_high);
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (is_backbone[k] && !train_backbone) continue;
        optimizer_step(*params[k], *grad_refs[k], states[k], cyc.lr, cyc.beta1, config.beta2,
                       config.weight_decay);
      }
      result.steps.push_back(report);
      accumulate(log.mean, report);
      ++step;
    }
    scale(log.mean, 1.0 / static_cast<double>(scenes.size()));
    result.epochs.push_back(log);
    result.checkpoint.epoch = epoch + 1;
  }
  return result;
}

std::string format_train_log(std::span<const EpochLog> log) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& e : log)
    os << "epoch=" << e.epoch << " gt_paste=" << (e.gt_paste ? "on" : "off") << " pasted=" << e.pasted
       << " l_heatmap=" << e.mean.l_heatmap << " l_query=" << e.mean.l_query
       << " l_cls=" << e.mean.l_cls << " l_reg=" << e.mean.l_reg << " total=" << e.mean.total << "\n";
  return os.str();
}

std::vector<Detection> infer(const Checkpoint& ckpt, const Config& config, const SyntheticScene& scene) {
  if (config_hash(config) != ckpt.config_hash)
    throw Error(ErrorKind::ConfigMismatch, "checkpoint was trained under a different config");
  const ForwardOutput out = model_forward(ckpt.model, config, scene, false, 0);
  return decode_detections(out, config);
}

std::vector<Detection> infer(const Checkpoint& ckpt, const SyntheticScene& scene) {
  return infer(ckpt, ckpt.config, scene);
}

std::vector<std::vector<Detection>> infer_all(const Checkpoint& ckpt,
                                              std::span<const SyntheticScene> scenes) {
  std::vector<std::vector<Detection>> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) { out[i] = infer(ckpt, scenes[i]); });
  return out;
}

std::vector<SyntheticScene> generate_scenes(const Config& config, int count) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_scene(hash_combine(config.seed, static_cast<std::uint64_t>(i)), config));
  return scenes;
}

}  // namespace decorfuse
