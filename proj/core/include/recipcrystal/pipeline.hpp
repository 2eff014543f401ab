#pragma once

#include <map>
#include <ostream>
#include <string>

#include "recipcrystal/checkpoint.hpp"
#include "recipcrystal/config.hpp"
#include "recipcrystal/diffusion.hpp"
#include "recipcrystal/xtl_io.hpp"

namespace recip {

VaeConfig make_vae_config(const Config& cfg);
DiffusionConfig make_diffusion_config(const Config& cfg);
TrainConfig make_train_config(const Config& cfg, std::uint64_t seed_override);

// Worker count for corpus-parallel stages: min(hardware, RECIPCRYSTAL_THREADS).
int worker_count();

struct PreprocessOptions {
  int denominator = 48;
  int jmax = 4;
  Truncation truncation = Truncation::cubic;
};

struct PreprocessStats {
  int total = 0;
  int written = 0;
  int collisions = 0;
  int invalid = 0;
};

// Re-snap crystals from XTL-JSON lines onto the target grid and write the
// archive (crystal + Fourier matrix per line). Collisions and validation
// failures are logged with their record ids, never silently dropped.
PreprocessStats run_preprocess(const std::string& in_path, const std::string& out_path,
                               const PreprocessOptions& opts, std::ostream* log = nullptr);

struct ScreenOptions {
  RecoverOptions recover;
  int threads = 0;  // 0 -> worker_count()
};

ScreenReport run_screen(const std::string& archive_path, const ScreenOptions& opts = {});

struct TrainPaths {
  std::string corpus;   // XTL-JSON lines
  std::string ckpt_out;
  std::string metrics;  // optional line-JSON stream
  std::string resume;   // optional checkpoint to continue from
  std::string vae_ckpt; // required for diffusion training
};

void run_train_vae(const Config& cfg, const TrainPaths& paths, std::uint64_t seed);
void run_train_diffusion(const Config& cfg, const TrainPaths& paths, std::uint64_t seed);

struct LoadedVae {
  VaeModel model;
  TrainState state;
  Config config;
  std::uint64_t config_hash = 0;
};
LoadedVae load_vae(const std::string& ckpt_path);

struct LoadedDiffusion {
  DiffuserModel model;
  DiffTrainState state;
  Config config;
  NoiseScales scales;
  std::uint64_t vae_config_hash = 0;
};
LoadedDiffusion load_diffusion(const std::string& ckpt_path);

struct SampleOptions {
  int n = 100;
  int steps = 8;
  std::uint64_t seed = 0;
  bool strict_recovery = false;  // when true, apply the screening tolerance
  int max_count = 200;           // per-species cap on rounded F0
};

struct SampleStats {
  int n = 0;
  int recovered = 0;
  int rejected = 0;
  std::array<int, 3> stage_mix{0, 0, 0};
  std::map<int, int> cell_size_histogram;     // total atoms -> samples
  std::map<int, int> species_count_histogram; // per-species F0 counts
};

SampleStats run_sample(const LoadedVae& vae, const LoadedDiffusion& diff,
                       const SampleOptions& opts, const std::string& out_path);
void write_sample_stats(const SampleStats& stats, const std::string& path);

struct RecoverRunStats {
  int total = 0;
  int recovered = 0;
};
RecoverRunStats run_recover(const std::string& in_path, const std::string& out_path,
                            const RecoverOptions& opts = {});

}  // namespace recip
