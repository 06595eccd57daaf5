// Command-line entry point: world/data generation, detector training and
// evaluation, guarded generation and the evaluation harness.

#include "ndm/config.hpp"
#include "ndm/detector.hpp"
#include "ndm/error.hpp"
#include "ndm/io.hpp"
#include "ndm/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace {

using namespace ndm;

// A malformed flag value; reported with exit code 2 like CLI11's own errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::size_t threads = 0;
  bool threads_set = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value configuration file");
  cmd->add_option("--set", c.overrides, "override a setting, key=value (repeatable)");
  cmd->add_option("--output-dir", c.output_dir, "directory for reports");
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(Errc::config, "--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("cannot parse number '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

TokenPrompt parse_prompt(const std::string& text) {
  TokenPrompt p;
  for (double v : parse_list(text)) {
    if (v < 0 || v != static_cast<double>(static_cast<TokenId>(v))) throw UsageError("token ids must be integers");
    p.tokens.push_back(static_cast<TokenId>(v));
  }
  return p;
}

Pipeline build_pipeline(const PipelineConfig& cfg, const std::string& model_path) {
  const std::string path = model_path.empty() ? cfg.model_path.string() : model_path;
  if (path.empty()) fail(Errc::config, "no detector model given (--model or model=)");
  DetectorModel model = load_detector(path);
  World world = World::build(cfg.world);
  const double tau = calibrate_tau(world, cfg);
  auto provider = make_provider(cfg, world);
  return Pipeline(std::move(world), std::move(model), cfg, std::move(provider), tau);
}

void print_json_line(const nlohmann::ordered_json& j) { std::cout << j.dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-based detection and mitigation over a toy latent diffusion model"};
  app.require_subcommand(1);
  Common common;
  std::function<void()> action;

  // world gen
  auto* world_cmd = app.add_subcommand("world", "toy world utilities")->require_subcommand(1);
  auto* world_gen = world_cmd->add_subcommand("gen", "write the vocabulary file");
  add_common(world_gen, common);
  std::string world_out = "vocab.json";
  world_gen->add_option("--out", world_out, "vocabulary JSON path");
  world_gen->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const World w = World::build(cfg.world);
      write_text_file(world_out, vocabulary_to_json(w.vocab()).dump(2) + "\n");
      std::cerr << "wrote " << world_out << "\n";
    };
  });

  // data synth
  auto* data_cmd = app.add_subcommand("data", "dataset utilities")->require_subcommand(1);
  auto* data_synth = data_cmd->add_subcommand("synth", "synthesise a labelled prompt dataset");
  add_common(data_synth, common);
  std::string data_out;
  std::vector<std::string> data_exclude;
  DatasetSpec dspec;
  data_synth->add_option("--out", data_out, "dataset JSONL path")->required();
  data_synth->add_option("--seed", dspec.seed, "generator seed");
  data_synth->add_option("--n-per-class", dspec.n_per_class, "prompts per class");
  data_synth->add_option("--min-len", dspec.min_length, "minimum prompt length");
  data_synth->add_option("--max-len", dspec.max_length, "maximum prompt length");
  data_synth->add_option("--exclude", data_exclude, "datasets whose prompts must not repeat");
  data_synth->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const World w = World::build(cfg.world);
      std::set<std::vector<TokenId>> seen;
      for (const auto& path : data_exclude) {
        for (const auto& p : load_dataset(path, &w.vocab()).entries) seen.insert(p.tokens);
      }
      write_text_file(data_out, dataset_to_jsonl(synth_dataset(w.vocab(), dspec, seen)));
      std::cerr << "wrote " << data_out << "\n";
    };
  });

  // detector train|eval
  auto* det_cmd = app.add_subcommand("detector", "train or evaluate the detector")->require_subcommand(1);
  auto* det_train = det_cmd->add_subcommand("train", "fit PCA, LDA and SVM on first-step noise");
  add_common(det_train, common);
  std::string train_data, train_out = "model.json";
  det_train->add_option("--data", train_data, "labelled dataset JSONL")->required();
  det_train->add_option("--out", train_out, "model JSON path");
  det_train->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const World w = World::build(cfg.world);
      const auto data = load_dataset(train_data, &w.vocab());
      const auto model = train_detector(data, w, cfg.feature, cfg.svm_regularization);
      save_detector(model, train_out);
      const auto m = evaluate_detector(model, data, w);
      std::cerr << "wrote " << train_out << " (training accuracy " << m.accuracy << ")\n";
    };
  });
  auto* det_eval = det_cmd->add_subcommand("eval", "accuracy, precision, recall and latency");
  add_common(det_eval, common);
  std::string eval_data, eval_model;
  det_eval->add_option("--data", eval_data, "labelled dataset JSONL")->required();
  det_eval->add_option("--model", eval_model, "model JSON path")->required();
  det_eval->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const auto model = load_detector(eval_model);
      const World w = World::build(cfg.world);
      const auto metrics = evaluate_detector(model, load_dataset(eval_data, &w.vocab()), w);
      write_text_file(cfg.output_dir / "detector_metrics.json", metrics.to_json().dump(2) + "\n");
      std::cout << metrics.to_json().dump(2) << '\n';
    };
  });

  // detect
  auto* detect = app.add_subcommand("detect", "classify prompts; one {decision, value} line each");
  add_common(detect, common);
  std::string detect_prompts, detect_model;
  detect->add_option("--prompt-file", detect_prompts, "prompt JSONL")->required();
  detect->add_option("--model", detect_model, "model JSON path")->required();
  detect->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const auto model = load_detector(detect_model);
      const World w = World::build(cfg.world);
      const auto prompts = load_dataset(detect_prompts, &w.vocab());
      for (const auto& p : prompts.entries) {
        const double v = model.decision_value(extract_feature(p, w, model.feature_config));
        nlohmann::ordered_json j;
        j["decision"] = v > 0.0 ? "unsafe" : "benign";
        j["value"] = v;
        print_json_line(j);
      }
    };
  });

  // generate
  auto* gen = app.add_subcommand("generate", "guarded generation for each prompt");
  add_common(gen, common);
  std::string gen_prompts, gen_model, gen_mode;
  gen->add_option("--prompt-file", gen_prompts, "prompt JSONL")->required();
  gen->add_option("--model", gen_model, "model JSON path");
  gen->add_option("--mode", gen_mode, "refuse or mitigate")->check(CLI::IsMember({"refuse", "mitigate"}));
  gen->callback([&] {
    action = [&] {
      PipelineConfig cfg = resolve(common);
      if (!gen_mode.empty()) apply_setting(cfg, "mode", gen_mode);
      const Pipeline pipe = build_pipeline(cfg, gen_model);
      const auto prompts = load_dataset(gen_prompts, &pipe.world().vocab());
      std::string report;
      for (std::size_t i = 0; i < prompts.entries.size(); ++i) {
        const auto& p = prompts.entries[i];
        const auto r = pipe.generate(p, prompt_noise(pipe.world(), cfg.noise_seed, i));
        nlohmann::ordered_json j;
        j["index"] = i;
        j["tokens"] = p.tokens;
        j["decision"] = r.decision;
        j["decision_value"] = r.decision_value;
        j["action"] = to_string(r.action);
        j["unsafe_score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
        j["unsafe_output"] = r.score && *r.score > pipe.tau();
        j["negative"] = r.negative ? r.negative->to_json(pipe.world().vocab()) : nlohmann::ordered_json(nullptr);
        if (r.trace) {
          j["optimizer"] = {{"reason", to_string(r.trace->reason)},
                            {"initial_loss", r.trace->initial_loss},
                            {"final_loss", r.trace->final_loss()},
                            {"iterations", r.trace->steps.size()}};
          write_text_file(cfg.output_dir / ("trace_" + std::to_string(i) + ".jsonl"), r.trace->to_jsonl());
        }
        if (!r.note.empty()) j["note"] = r.note;
        if (r.x0) {
          const auto path = cfg.output_dir / ("latent_" + std::to_string(i) + ".json");
          write_text_file(path, latent_to_json(*r.x0).dump() + "\n");
          j["latent"] = path.filename().string();
        }
        j["wall_ms"] = r.wall_ms;
        report += j.dump() + "\n";
        print_json_line(j);
      }
      write_text_file(cfg.output_dir / "generate.jsonl", report);
    };
  });

  // eval suite|ablate|seed-sweep|alpha-sweep
  auto* eval_cmd = app.add_subcommand("eval", "evaluation harness")->require_subcommand(1);
  std::string ev_data, ev_model, ev_conditions, ev_prompt, ev_alphas = "0.5,0.6,0.7,0.8,0.9";
  std::size_t ev_seeds = 100;
  std::uint64_t ev_seed_base = 4242;

  auto run_suite = [&](std::vector<Condition> conds) {
    const auto cfg = resolve(common);
    const Pipeline pipe = build_pipeline(cfg, ev_model);
    const auto data = load_dataset(ev_data, &pipe.world().vocab());
    const auto report = evaluate_suite(pipe, data, conds);
    write_suite_report(report, pipe.world().vocab(), cfg.output_dir);
    std::cout << report.summary_json().dump(2) << '\n';
  };

  auto* suite = eval_cmd->add_subcommand("suite", "run conditions over a dataset");
  add_common(suite, common);
  suite->add_option("--data", ev_data, "labelled dataset JSONL")->required();
  suite->add_option("--model", ev_model, "model JSON path");
  suite->add_option("--conditions", ev_conditions, "comma-separated conditions (default: all)");
  suite->callback([&] {
    action = [&] {
      std::vector<Condition> conds;
      std::stringstream ss(ev_conditions);
      std::string name;
      while (std::getline(ss, name, ',')) conds.push_back(condition_from_string(name));
      run_suite(conds.empty() ? all_conditions() : conds);
    };
  });

  auto* ablate = eval_cmd->add_subcommand("ablate", "the six ablation arms");
  add_common(ablate, common);
  ablate->add_option("--data", ev_data, "labelled dataset JSONL")->required();
  ablate->add_option("--model", ev_model, "model JSON path");
  ablate->callback([&] {
    action = [&] {
      run_suite({Condition::base, Condition::neg_fixed, Condition::neg_adaptive, Condition::noise_only,
                 Condition::neg_noise, Condition::full});
    };
  });

  auto* sweep = eval_cmd->add_subcommand("seed-sweep", "unsafe-score distribution over initial noises");
  add_common(sweep, common);
  sweep->add_option("--prompt", ev_prompt, "comma-separated token ids")->required();
  sweep->add_option("--model", ev_model, "model JSON path");
  sweep->add_option("--seeds", ev_seeds, "number of initial noises");
  sweep->add_option("--seed-base", ev_seed_base, "seed of the noise stream");
  sweep->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const Pipeline pipe = build_pipeline(cfg, ev_model);
      const auto result = seed_sweep(pipe, parse_prompt(ev_prompt), ev_seeds, ev_seed_base);
      write_text_file(cfg.output_dir / "seed_sweep.json", result.to_json().dump(2) + "\n");
      auto brief = result.to_json();
      brief["before"].erase("scores");
      brief["after"].erase("scores");
      std::cout << brief.dump(2) << '\n';
    };
  });

  auto* alpha = eval_cmd->add_subcommand("alpha-sweep", "attack success rate of the full pipeline per alpha");
  add_common(alpha, common);
  alpha->add_option("--data", ev_data, "labelled dataset JSONL")->required();
  alpha->add_option("--model", ev_model, "model JSON path");
  alpha->add_option("--alphas", ev_alphas, "comma-separated alphas");
  alpha->callback([&] {
    action = [&] {
      const auto cfg = resolve(common);
      const Pipeline pipe = build_pipeline(cfg, ev_model);
      const auto data = load_dataset(ev_data, &pipe.world().vocab());
      const auto alphas = parse_list(ev_alphas);
      std::string lines;
      for (const auto& pt : alpha_sweep(pipe, data, alphas)) {
        nlohmann::ordered_json j{{"alpha", pt.alpha}, {"asr", pt.asr}, {"target_fraction", pt.target_fraction}};
        lines += j.dump() + "\n";
        print_json_line(j);
      }
      write_text_file(cfg.output_dir / "alpha_sweep.jsonl", lines);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << "\nRun with --help for more information.\n";
    return 2;
  } catch (const ndm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
