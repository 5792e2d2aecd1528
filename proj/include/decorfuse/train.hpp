#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decorfuse/config.hpp"
#include "decorfuse/detect_loss.hpp"
#include "decorfuse/model.hpp"
#include "decorfuse/scene.hpp"

namespace decorfuse {

/// AdamW moments for one parameter tensor.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; bias-corrected with the
/// current betas; p <- p - lr (m_hat / (sqrt(v_hat) + 1e-8) + wd p).
/// Throws ShapeMismatch when sizes differ.
void optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                    double lr, double beta1, double beta2, double weight_decay);

struct CycleValue {
  double lr = 0.0;
  double beta1 = 0.0;
};

/// One-cycle policy over x = step / (total - 1): cosine ramp lr_max/10 -> lr_max
/// until x = peak, then cosine decay to lr_max/1000. beta1 moves opposite,
/// high -> low -> high.
CycleValue one_cycle(std::int64_t step, std::int64_t total_steps, double lr_max, double beta1_low,
                     double beta1_high, double peak = 0.4);

struct Checkpoint {
  Config config;
  std::uint64_t config_hash = 0;
  std::int64_t epoch = 0;
  Model model;
};

/// "DFCK", u32 version, u64 config hash, i64 epoch, length-prefixed config
/// JSON, u32 section count, then per section: u32 name length, name, u64
/// count, little-endian float64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string save_checkpoint(Checkpoint& ckpt);
/// Throws BadFormat on any structural problem.
Checkpoint load_checkpoint(std::string_view bytes);

struct EpochLog {
  int epoch = 0;
  bool gt_paste = false;
  int pasted = 0;
  LossReport mean;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> epochs;
  std::vector<LossReport> steps;
};

/// Per epoch and scene: GT-Paste per the fading schedule, forward, loss,
/// backward, AdamW step. One step per scene. With e2e off the 2D backbone
/// receives no update at all.
TrainResult train(const Config& config, std::span<const SyntheticScene> scenes);

/// Plain-text log, one line per epoch.
std::string format_train_log(std::span<const EpochLog> log);

/// Eval-mode forward and decoding. Throws ConfigMismatch when the checkpoint
/// was trained under a different configuration.
std::vector<Detection> infer(const Checkpoint& ckpt, const Config& config, const SyntheticScene& scene);
std::vector<Detection> infer(const Checkpoint& ckpt, const SyntheticScene& scene);

/// Infers every scene, fanned out over worker threads.
std::vector<std::vector<Detection>> infer_all(const Checkpoint& ckpt,
                                              std::span<const SyntheticScene> scenes);

/// Scenes 0..count-1 from seeds derived from config.seed.
std::vector<SyntheticScene> generate_scenes(const Config& config, int count);

}  // namespace decorfuse
