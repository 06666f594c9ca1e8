#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "moext/checkpoint.hpp"
#include "moext/data.hpp"
#include "moext/errors.hpp"
#include "moext/evaluation.hpp"
#include "moext/flow.hpp"
#include "moext/preprocess.hpp"
#include "moext/synth.hpp"
#include "moext/training.hpp"

namespace fs = std::filesystem;

namespace moext::cli {

namespace {

struct Globals {
  std::uint64_t seed = 0;
  fs::path out = "out";
  int jobs = 1;
  bool deterministic = false;
  std::string log_level = "info";
};

// Settings shared by every training command.
struct TrainOptions {
  int width_divisor = 1;
  bool no_pretrain = false, no_macro = false, no_motion = false, no_st = false, no_ss = false;
};

void add_train_options(CLI::App* sub, train::TrainConfig& cfg, const std::string& prefix) {
  const std::string p = prefix.empty() ? "--" : "--" + prefix + "-";
  sub->add_option(p + "epochs", cfg.epochs, "Training epochs")->check(CLI::PositiveNumber);
  sub->add_option(p + "batch-size", cfg.batch_size, "Input sets (pretrain) or clip pairs (finetune) per batch")
      ->check(CLI::PositiveNumber);
  sub->add_option(p + "lr", cfg.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  sub->add_option(p + "weight-decay", cfg.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
  sub->add_option(p + "beta1", cfg.adam_beta1, "First-moment coefficient");
  sub->add_option(p + "beta2", cfg.adam_beta2, "Second-moment coefficient");
}

void add_loss_options(CLI::App* sub, train::TrainConfig& cfg, const std::string& prefix) {
  const std::string p = prefix.empty() ? "--" : "--" + prefix + "-";
  sub->add_option(p + "epsilon", cfg.loss.epsilon, "Contrastive margin in [0.2, 0.5]");
  sub->add_option(p + "alpha-st", cfg.loss.alpha_st, "Weight of the shape/texture loss");
  sub->add_option(p + "alpha-ss", cfg.loss.alpha_ss, "Weight of the onset/apex shape loss");
  sub->add_option(p + "m", cfg.loss.m, "Expansion-set size");
}

void add_ablation_flags(CLI::App* sub, TrainOptions& t, bool pretrain_flag) {
  if (pretrain_flag) sub->add_flag("--no-pretrain", t.no_pretrain, "Fine-tune from scratch");
  sub->add_flag("--no-macro", t.no_macro, "Leave macro-expression clips out of pre-training");
  sub->add_flag("--no-motion-extractor", t.no_motion, "Feed the raw shape difference instead of motion features");
  sub->add_flag("--no-st-loss", t.no_st, "Drop the shape/texture contrastive loss");
  sub->add_flag("--no-ss-loss", t.no_ss, "Drop the onset/apex shape contrastive loss");
}

train::Ablation ablation_of(const TrainOptions& t) {
  train::Ablation a;
  a.use_pretrained = !t.no_pretrain;
  a.use_macro_data = !t.no_macro;
  a.use_motion_extractor = !t.no_motion;
  a.use_st_loss = !t.no_st;
  a.use_ss_loss = !t.no_ss;
  return a;
}

nn::ModelConfig model_of(const TrainOptions& t) {
  if (t.width_divisor < 1) throw ConfigError("--width-divisor must be >= 1");
  return t.width_divisor == 1 ? nn::ModelConfig{} : nn::ModelConfig::reduced(t.width_divisor);
}

// Hash of everything that influences the results: the seed and the
// subcommand's own settings (output location and job count excluded).
std::string run_hash(const CLI::App& sub, const Globals& g) {
  const std::string text = "seed=" + std::to_string(g.seed) + "\n[" + sub.get_name() + "]\n" +
                           sub.config_to_str(true, false);
  return eval::config_hash(nlohmann::json(text));
}

void write_run_record(const CLI::App& sub, const Globals& g, const std::string& hash,
                      const nlohmann::json& extra = nlohmann::json::object()) {
  fs::create_directories(g.out);
  nlohmann::json j{{"command", sub.get_name()},
                   {"config_hash", hash},
                   {"seed", g.seed},
                   {"config", sub.config_to_str(true, false)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream out(g.out / ("run_" + sub.get_name() + ".json"));
  if (!out) throw IoError("cannot write into " + g.out.string());
  out << j.dump(2) << '\n';
  std::ofstream(g.out / "config_hash.txt") << hash << '\n';
}

void require_file(const fs::path& p, const std::string& what) {
  std::error_code ec;
  if (!fs::exists(p, ec)) throw IoError(what + " not found: " + p.string());
}

std::vector<data::Manifest> load_manifests(const std::vector<fs::path>& paths) {
  std::vector<data::Manifest> out;
  for (const auto& p : paths) {
    require_file(p, "manifest");
    out.push_back(data::load_manifest(p));
  }
  return out;
}

int report_error(Exit code, const std::string& kind, const std::string& message) {
  std::cerr << "error: " << nlohmann::json{{"code", static_cast<int>(code)}, {"kind", kind}, {"message", message}}.dump()
            << std::endl;
  return code;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Micro-expression recognition with motion-feature pre-training", "moext"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI file; [section] per subcommand, flags on the command line win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Upper bound on concurrent work items")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // synth
  synth::SynthConfig sc;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with manifests and landmarks");
  synth_cmd->add_option("--subjects", sc.n_subjects, "Number of subjects")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--clips", sc.clips_per_subject, "Micro clips per subject")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--classes", sc.n_classes, "Number of classes")->check(CLI::Range(1, synth::kMaxClasses));
  synth_cmd->add_option("--macro-clips", sc.macro_clips_per_subject, "Macro clips per subject")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--amplitude", sc.amplitude, "Apex deformation of micro clips (pixels)");
  synth_cmd->add_option("--raw-size", sc.raw_size, "Side of the rendered frames");

  // preprocess
  std::vector<fs::path> pp_manifests;
  std::optional<fs::path> pp_landmarks;
  int pp_size = kImageSize;
  auto* pp_cmd = app.add_subcommand("preprocess", "Align and crop the frames of one or more manifests");
  pp_cmd->add_option("--manifest", pp_manifests, "Raw manifest CSV (repeatable)")->required();
  pp_cmd->add_option("--landmarks", pp_landmarks, "Landmark JSON to use instead of detection");
  pp_cmd->add_option("--size", pp_size, "Crop side")->check(CLI::PositiveNumber);

  // pretrain
  train::TrainConfig pre_cfg;
  pre_cfg.phase = train::Phase::Pretrain;
  TrainOptions pre_opts;
  std::vector<fs::path> pre_manifests;
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pre-training on micro and macro clips");
  pre_cmd->add_option("--manifest", pre_manifests, "Processed manifest (repeatable; macro rows allowed)")->required();
  add_train_options(pre_cmd, pre_cfg, "");
  add_loss_options(pre_cmd, pre_cfg, "");
  pre_cmd->add_option("--pseudo-apex", pre_cfg.macro_pseudo_apex_n, "Frame number standing in for a macro apex");
  pre_cmd->add_option("--width-divisor", pre_opts.width_divisor, "Divide every layer width (1 = full size)");
  add_ablation_flags(pre_cmd, pre_opts, false);

  // finetune
  train::TrainConfig ft_cfg;
  ft_cfg.phase = train::Phase::Finetune;
  TrainOptions ft_opts;
  fs::path ft_manifest;
  std::optional<fs::path> ft_checkpoint;
  bool ft_no_augment = false;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune the classifier on labelled micro clips");
  ft_cmd->add_option("--manifest", ft_manifest, "Processed micro manifest")->required();
  ft_cmd->add_option("--checkpoint", ft_checkpoint, "Pre-trained checkpoint");
  add_train_options(ft_cmd, ft_cfg, "");
  ft_cmd->add_flag("--no-augment", ft_no_augment, "Skip the mirror and rotation copies");
  ft_cmd->add_option("--width-divisor", ft_opts.width_divisor, "Layer width divisor when not using a checkpoint");
  ft_cmd->add_flag("--no-pretrain", ft_opts.no_pretrain, "Fine-tune from scratch");
  ft_cmd->add_flag("--no-motion-extractor", ft_opts.no_motion,
                   "Feed the raw shape difference instead of motion features");

  // evaluate
  eval::ProtocolConfig ev;
  ev.pretrain.phase = train::Phase::Pretrain;
  ev.finetune.phase = train::Phase::Finetune;
  TrainOptions ev_opts;
  std::string ev_protocol;
  std::vector<fs::path> ev_manifests, ev_macro;
  std::optional<fs::path> ev_checkpoint;
  std::vector<std::string> ev_classes;
  bool ev_no_augment = false;
  auto* ev_cmd = app.add_subcommand("evaluate", "Leave-one-subject-out evaluation under a protocol");
  ev_cmd->add_option("--protocol", ev_protocol, "SDE_CASME2_5, SDE_SAMM_5, SDE_CASME3_3, CDE_3 or SDE_SYNTH")
      ->required();
  ev_cmd->add_option("--manifest", ev_manifests, "Processed micro manifest, one per dataset (repeatable)");
  ev_cmd->add_option("--macro-manifest", ev_macro, "Processed macro manifest for pre-training (repeatable)");
  ev_cmd->add_option("--checkpoint", ev_checkpoint, "Shared pre-trained checkpoint (skips pre-training)");
  ev_cmd->add_flag("--exclude-test-subjects-from-pretrain", ev.exclude_test_subjects_from_pretrain,
                   "Pre-train per fold without the held-out subject");
  ev_cmd->add_option("--classes", ev_classes, "Override the 5-class list of SDE_CASME2_5 / SDE_SAMM_5");
  add_train_options(ev_cmd, ev.pretrain, "pretrain");
  add_loss_options(ev_cmd, ev.pretrain, "pretrain");
  add_train_options(ev_cmd, ev.finetune, "finetune");
  ev_cmd->add_flag("--no-augment", ev_no_augment, "Skip the mirror and rotation copies when fine-tuning");
  ev_cmd->add_option("--width-divisor", ev_opts.width_divisor, "Divide every layer width (1 = full size)");
  add_ablation_flags(ev_cmd, ev_opts, true);

  // flow
  std::optional<fs::path> fl_frames, fl_manifest;
  int fl_reference = 0;
  auto* fl_cmd = app.add_subcommand("flow", "Mean optical-flow magnitude and angle relative to a reference frame");
  auto* fl_frames_opt = fl_cmd->add_option("--frames", fl_frames, "Directory of frames (one sequence)");
  auto* fl_manifest_opt = fl_cmd->add_option("--manifest", fl_manifest, "Manifest; one sequence per clip (onset..offset)");
  fl_frames_opt->excludes(fl_manifest_opt);
  fl_cmd->add_option("--reference", fl_reference, "Reference frame index within the sequence")
      ->check(CLI::NonNegativeNumber);

  for (auto* sub : app.get_subcommands({}))
    sub->footer("Global options, accepted before or after the subcommand: --config, --seed, --out, --jobs, "
                "--deterministic, --log-level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    return report_error(kMissingFile, "missing_file", e.what());
  } catch (const CLI::ParseError& e) {
    return report_error(kUsage, "usage", e.what());
  }

  auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  spdlog::set_default_logger(std::make_shared<spdlog::logger>("moext", sink));
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  if (g.deterministic) g.jobs = 1;
  cv::setNumThreads(g.deterministic ? 1 : g.jobs);
  Eigen::setNbThreads(1);

  try {
    if (*synth_cmd) {
      sc.seed = g.seed;
      const auto hash = run_hash(*synth_cmd, g);
      const auto res = synth::generate_synthetic_dataset(sc, g.out);
      write_run_record(*synth_cmd, g, hash,
                       {{"micro_samples", res.micro.samples.size()}, {"macro_samples", res.macro.samples.size()}});
      std::cout << "wrote " << res.micro.samples.size() << " micro and " << res.macro.samples.size()
                << " macro clips to " << g.out.string() << '\n';
    } else if (*pp_cmd) {
      const auto hash = run_hash(*pp_cmd, g);
      data::PreprocessOptions opt;
      opt.size = pp_size;
      if (pp_landmarks) {
        require_file(*pp_landmarks, "landmark file");
        opt.landmarks = data::load_landmarks(*pp_landmarks);
      }
      nlohmann::json skipped = nlohmann::json::object();
      for (const auto& path : pp_manifests) {
        require_file(path, "manifest");
        const auto m = data::load_manifest(path);
        const std::string stem = path.stem().string();
        auto res = data::preprocess_manifest(m, g.out / stem, opt);
        data::write_manifest(res.manifest, g.out / (stem + ".csv"));
        auto& list = skipped[stem] = nlohmann::json::array();
        for (const auto& s : res.skipped)
          list.push_back({{"subject_id", s.subject_id}, {"clip_id", s.clip_id}, {"reason", s.reason}});
        std::cout << stem << ": " << res.manifest.samples.size() << " clips aligned, " << res.skipped.size()
                  << " skipped -> " << (g.out / (stem + ".csv")).string() << '\n';
      }
      write_run_record(*pp_cmd, g, hash, {{"skipped", skipped}});
    } else if (*pre_cmd) {
      pre_cfg.seed = g.seed;
      pre_cfg.ablation = ablation_of(pre_opts);
      const auto hash = run_hash(*pre_cmd, g);
      const auto manifests = load_manifests(pre_manifests);
      train::Hooks hooks;
      fs::create_directories(g.out);
      hooks.last_good = g.out / "pretrain.ckpt";
      const auto ckpt = train::pretrain(pre_cfg, model_of(pre_opts), manifests, hooks);
      train::save_checkpoint(ckpt, g.out / "pretrain.ckpt");
      train::write_history_csv(ckpt.history, train::Phase::Pretrain, g.out / "pretrain_history.csv");
      write_run_record(*pre_cmd, g, hash);
      std::cout << "pre-training done: l_re " << ckpt.history.front().l_re << " -> " << ckpt.history.back().l_re
                << '\n';
    } else if (*ft_cmd) {
      ft_cfg.seed = g.seed;
      ft_cfg.augment = !ft_no_augment;
      ft_cfg.ablation = ablation_of(ft_opts);
      const auto hash = run_hash(*ft_cmd, g);
      require_file(ft_manifest, "manifest");
      const auto manifest = data::load_manifest(ft_manifest);
      std::optional<train::Checkpoint> pre;
      if (!ft_opts.no_pretrain) {
        if (!ft_checkpoint) throw ConfigError("finetune needs --checkpoint or --no-pretrain");
        require_file(*ft_checkpoint, "checkpoint");
        pre = train::load_checkpoint(*ft_checkpoint);
      }
      auto model = model_of(ft_opts);
      model.num_classes = static_cast<int>(manifest.label_schema.size());
      fs::create_directories(g.out);
      train::Hooks hooks;
      hooks.last_good = g.out / "finetune.ckpt";
      const auto ckpt = train::finetune(ft_cfg, pre ? &*pre : nullptr, model, manifest, hooks);
      train::save_checkpoint(ckpt, g.out / "finetune.ckpt");
      train::write_history_csv(ckpt.history, train::Phase::Finetune, g.out / "finetune_history.csv");
      write_run_record(*ft_cmd, g, hash, {{"classes", manifest.label_schema}});
      std::cout << "fine-tuning done: train accuracy " << ckpt.history.back().train_acc << '\n';
    } else if (*ev_cmd) {
      ev.protocol = eval::parse_protocol(ev_protocol);
      ev.pretrain.seed = g.seed;
      ev.finetune.seed = g.seed;
      ev.finetune.augment = !ev_no_augment;
      ev.ablation = ablation_of(ev_opts);
      ev.model = model_of(ev_opts);
      ev.jobs = g.jobs;
      if (!ev_classes.empty()) ev.classes = ev_classes;
      if (ev_checkpoint) {
        require_file(*ev_checkpoint, "checkpoint");
        ev.pretrained_checkpoint = ev_checkpoint;
      }
      const auto hash = run_hash(*ev_cmd, g);
      eval::ProtocolData data;
      data.micro = load_manifests(ev_manifests);
      data.macro = load_manifests(ev_macro);
      const auto report = eval::run_protocol(ev, data, hash);
      eval::write_report(report, g.out);
      write_run_record(*ev_cmd, g, hash);
      std::cout << eval::to_string(report.protocol) << ": UF1 " << report.overall.uf1 << " UAR " << report.overall.uar
                << " ACC " << report.overall.acc << " (" << report.overall.n << " samples)\n";
    } else if (*fl_cmd) {
      const auto hash = run_hash(*fl_cmd, g);
      std::vector<std::pair<std::string, std::vector<fs::path>>> sequences;
      if (fl_frames) {
        sequences.emplace_back("flow", data::list_frames(*fl_frames));
      } else if (fl_manifest) {
        require_file(*fl_manifest, "manifest");
        for (const auto& s : data::load_manifest(*fl_manifest).samples)
          sequences.emplace_back("flow_" + s.subject_id + "_" + s.clip_id,
                                 std::vector<fs::path>(s.frame_paths.begin() + s.onset_idx,
                                                       s.frame_paths.begin() + s.offset_idx + 1));
      } else {
        throw ConfigError("flow needs --frames or --manifest");
      }
      for (const auto& [name, paths] : sequences) {
        std::vector<ImageTensor> frames;
        for (const auto& p : paths) frames.push_back(load_image(p));
        const auto stats = flow::flow_stats(frames, fl_reference, g.jobs);
        flow::write_flow_csv(stats, g.out / (name + ".csv"));
        std::ofstream(g.out / (name + ".svg")) << flow::flow_plot_svg(stats, name + " (config " + hash + ")");
      }
      write_run_record(*fl_cmd, g, hash, {{"sequences", sequences.size()}});
      std::cout << "flow statistics for " << sequences.size() << " sequence(s) in " << g.out.string() << '\n';
    }
  } catch (const MissingDatasetError& e) {
    return report_error(kMissingDataset, "missing_dataset", e.what());
  } catch (const IoError& e) {
    return report_error(kMissingFile, "missing_file", e.what());
  } catch (const ConfigError& e) {
    return report_error(kUsage, "config", e.what());
  } catch (const ParseError& e) {
    return report_error(kSchema, "parse", e.what());
  } catch (const SchemaError& e) {
    return report_error(kSchema, "schema", e.what());
  } catch (const ShapeError& e) {
    return report_error(kSchema, "shape", e.what());
  } catch (const CorruptArchiveError& e) {
    return report_error(kCheckpoint, "corrupt_checkpoint", e.what());
  } catch (const VersionError& e) {
    return report_error(kCheckpoint, "checkpoint_version", e.what());
  } catch (const NumericError& e) {
    return report_error(kNumeric, "numeric", e.what());
  } catch (const DetectionError& e) {
    return report_error(kNumeric, "detection", e.what());
  } catch (const std::exception& e) {
    return report_error(kFailure, "internal", e.what());
  }
  return kOk;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace moext::cli
