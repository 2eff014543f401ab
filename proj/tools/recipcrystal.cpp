// recipcrystal: reciprocal-space crystal toolkit CLI.
//
// Subcommands: preprocess, screen, train, sample, recover, synth.
// Exit codes: 0 success, 1 usage/config error, 2 data error.

#include <iostream>

#include <CLI11.hpp>

#include "recipcrystal/errors.hpp"
#include "recipcrystal/pipeline.hpp"

using namespace recip;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Reciprocal-space crystal toolkit"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Snap crystals and build a Fourier archive");
  std::string pre_in, pre_out;
  PreprocessOptions pre_opts;
  std::string pre_trunc = "cubic";
  pre->add_option("--in", pre_in, "XTL-JSON lines input")->required();
  pre->add_option("--out", pre_out, "archive output path")->required();
  pre->add_option("--denominator", pre_opts.denominator, "snapping grid (24 or 48)")
      ->check(CLI::IsMember({24, 48}));
  pre->add_option("--jmax", pre_opts.jmax, "Fourier truncation radius");
  pre->add_option("--truncation", pre_trunc, "cubic|spherical")
      ->check(CLI::IsMember({"cubic", "spherical"}));

  // screen
  auto* scr = app.add_subcommand("screen", "Run recovery over an archive and report");
  std::string scr_archive, scr_report, scr_csv;
  int scr_jmax = -1;
  scr->add_option("--archive", scr_archive, "preprocessed archive")->required();
  scr->add_option("--out", scr_report, "JSON report path")->required();
  scr->add_option("--csv", scr_csv, "CSV summary path");
  scr->add_option("--jmax", scr_jmax, "expected jmax (validated against the archive)");

  // train
  auto* tr = app.add_subcommand("train", "Train the VAE or the latent diffuser");
  std::string tr_kind, tr_config, tr_corpus, tr_out, tr_metrics, tr_resume, tr_vae;
  std::uint64_t tr_seed = 0;
  tr->add_option("--kind", tr_kind, "vae|diffusion")
      ->required()
      ->check(CLI::IsMember({"vae", "diffusion"}));
  tr->add_option("--config", tr_config, "flat key=value config file")->required();
  tr->add_option("--corpus", tr_corpus, "XTL-JSON lines training corpus")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--metrics", tr_metrics, "line-JSON metrics stream");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_option("--vae", tr_vae, "VAE checkpoint (required for kind=diffusion)");
  tr->add_option("--seed", tr_seed, "training seed");

  // sample
  auto* sm = app.add_subcommand("sample", "Generate structures from trained checkpoints");
  std::string sm_vae, sm_diff, sm_out;
  SampleOptions sm_opts;
  sm->add_option("--vae", sm_vae, "VAE checkpoint")->required();
  sm->add_option("--diffusion", sm_diff, "diffusion checkpoint")->required();
  sm->add_option("--n", sm_opts.n, "number of samples");
  sm->add_option("--steps", sm_opts.steps, "reverse diffusion steps");
  sm->add_option("--seed", sm_opts.seed, "sampling seed");
  sm->add_flag("--strict-recovery", sm_opts.strict_recovery,
               "demand the exact screening roundtrip tolerance");
  sm->add_option("--out", sm_out, "XTL-JSON output (stats written to <out>.stats.json)")
      ->required();

  // recover
  auto* rc = app.add_subcommand("recover", "Recover coordinates from Fourier coefficients");
  std::string rc_in, rc_out;
  rc->add_option("--in", rc_in, "fourier-JSON lines input")->required();
  rc->add_option("--out", rc_out, "recovery results output")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "Write a deterministic synthetic corpus");
  std::string sy_out;
  int sy_n = 64, sy_max_species = 3, sy_max_atoms = 6, sy_denominator = 24;
  std::uint64_t sy_seed = 1;
  sy->add_option("--out", sy_out, "XTL-JSON output path")->required();
  sy->add_option("--n", sy_n, "number of crystals");
  sy->add_option("--seed", sy_seed, "base seed");
  sy->add_option("--max-species", sy_max_species, "max species per crystal");
  sy->add_option("--max-atoms", sy_max_atoms, "max atoms per species");
  sy->add_option("--denominator", sy_denominator, "grid denominator")
      ->check(CLI::IsMember({24, 48}));

  CLI11_PARSE(app, argc, argv);

  if (*pre) {
    pre_opts.truncation = pre_trunc == "cubic" ? Truncation::cubic : Truncation::spherical;
    const PreprocessStats stats = run_preprocess(pre_in, pre_out, pre_opts, &std::cerr);
    std::cout << "preprocessed " << stats.written << "/" << stats.total << " (collisions "
              << stats.collisions << ", invalid " << stats.invalid << ")\n";
  } else if (*scr) {
    const ScreenReport report = run_screen(scr_archive);
    int jmax = scr_jmax;
    if (jmax < 0) {
      const auto entries = read_archive(scr_archive);
      jmax = entries.empty() ? 0 : entries.front().jmax;
    }
    write_screen_report_json(report, scr_report, jmax);
    if (!scr_csv.empty()) write_screen_report_csv(report, scr_csv);
    std::cout << "screened " << report.total() << ": stage1 " << report.stage_counts[0]
              << ", stage2 " << report.stage_counts[1] << ", stage3 " << report.stage_counts[2]
              << ", unrecoverable " << report.unrecoverable << "\n";
  } else if (*tr) {
    const Config cfg = Config::parse_file(tr_config);
    TrainPaths paths{tr_corpus, tr_out, tr_metrics, tr_resume, tr_vae};
    if (tr_kind == "vae") {
      run_train_vae(cfg, paths, tr_seed);
    } else {
      run_train_diffusion(cfg, paths, tr_seed);
    }
    std::cout << "checkpoint written to " << tr_out << "\n";
  } else if (*sm) {
    const LoadedVae vae = load_vae(sm_vae);
    const LoadedDiffusion diff = load_diffusion(sm_diff);
    const SampleStats stats = run_sample(vae, diff, sm_opts, sm_out);
    write_sample_stats(stats, sm_out + ".stats.json");
    std::cout << "sampled " << stats.n << ": recovered " << stats.recovered << ", rejected "
              << stats.rejected << "\n";
  } else if (*rc) {
    const RecoverRunStats stats = run_recover(rc_in, rc_out);
    std::cout << "recovered " << stats.recovered << "/" << stats.total << "\n";
  } else if (*sy) {
    std::vector<XtlJsonRecord> records;
    records.reserve(sy_n);
    for (int i = 0; i < sy_n; ++i) {
      records.push_back(crystal_to_record(
          synth_crystal(sy_seed + i, sy_max_species, sy_max_atoms, sy_denominator)));
    }
    write_xtl_file(sy_out, records);
    std::cout << "wrote " << sy_n << " crystals to " << sy_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ArchiveCorrupt& e) {
    std::cerr << "archive error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
