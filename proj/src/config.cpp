#include "ndm/config.hpp"

#include "ndm/error.hpp"
#include "ndm/io.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace ndm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    fail(Errc::config, key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(Errc::config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail(Errc::config, key + ": expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::refuse ? "refuse" : "mitigate"; }
std::string_view to_string(ProviderChoice p) { return p == ProviderChoice::llm ? "llm" : "lexicon"; }

void apply_setting(PipelineConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto sz = [&] { return static_cast<std::size_t>(to_uint(key, v)); };
  if (key == "world.seed") c.world.seed = to_uint(key, v);
  else if (key == "world.query_gain") c.world.query_gain = to_double(key, v);
  else if (key == "world.unsafe_tilt") c.world.vocab.unsafe_tilt = to_double(key, v);
  else if (key == "world.unsafe_cohesion") c.world.vocab.unsafe_cohesion = to_double(key, v);
  else if (key == "world.background_cohesion") c.world.vocab.background_cohesion = to_double(key, v);
  else if (key == "world.vocab_size") c.world.vocab.size = sz();
  else if (key == "world.unsafe_count") c.world.vocab.unsafe_count = sz();
  else if (key == "world.stopword_count") c.world.vocab.stopword_count = sz();
  else if (key == "world.dim") c.world.vocab.dim = sz();
  else if (key == "world.channels") c.world.shape.channels = sz();
  else if (key == "world.height") c.world.shape.height = sz();
  else if (key == "world.width") c.world.shape.width = sz();
  else if (key == "sample_steps") c.world.sample_steps = sz();
  else if (key == "guidance") c.guidance = to_double(key, v);
  else if (key == "detector.gamma_det") c.feature.gamma_det = to_double(key, v);
  else if (key == "detector.seed") c.feature.seed = to_uint(key, v);
  else if (key == "detector.variant") c.feature.variant = feature_variant_from_string(v);
  else if (key == "detector.svm_c") c.svm_regularization = to_double(key, v);
  else if (key == "optim.alpha") c.optim.alpha = to_double(key, v);
  else if (key == "optim.max_iters") c.optim.max_iters = sz();
  else if (key == "optim.initial_step") c.optim.initial_step = to_double(key, v);
  else if (key == "optim.backtrack") c.optim.backtrack = to_double(key, v);
  else if (key == "optim.min_step") c.optim.min_step = to_double(key, v);
  else if (key == "optim.renormalize") c.optim.renormalize = to_bool(key, v);
  else if (key == "mode") {
    if (v == "refuse") c.mode = Mode::refuse;
    else if (v == "mitigate") c.mode = Mode::mitigate;
    else fail(Errc::config, "mode: expected refuse or mitigate");
  } else if (key == "provider") {
    if (v == "lexicon") c.provider = ProviderChoice::lexicon;
    else if (v == "llm") c.provider = ProviderChoice::llm;
    else fail(Errc::config, "provider: expected lexicon or llm");
  } else if (key == "output_dir") c.output_dir = v;
  else if (key == "model") c.model_path = v;
  else if (key == "lexicon") c.lexicon_path = v;
  else if (key == "noise_seed") c.noise_seed = to_uint(key, v);
  else if (key == "calibration.samples") c.calibration_samples = sz();
  else if (key == "calibration.percentile") c.tau_percentile = to_double(key, v);
  else if (key == "calibration.tau") c.tau = v.empty() ? std::nullopt : std::optional<double>(to_double(key, v));
  else if (key == "threads") c.threads = sz();
  else fail(Errc::config, "unknown setting '" + key + "'");
}

void PipelineConfig::validate() const {
  if (!(guidance > 0.0)) fail(Errc::config, "guidance must be positive");
  if (!(feature.gamma_det > 0.0)) fail(Errc::config, "detector.gamma_det must be positive");
  if (!(svm_regularization > 0.0)) fail(Errc::config, "detector.svm_c must be positive");
  if (!(world.query_gain > 0.0)) fail(Errc::config, "world.query_gain must be positive");
  if (world.sample_steps < 1) fail(Errc::config, "sample_steps must be >= 1");
  if (calibration_samples < 1) fail(Errc::config, "calibration.samples must be >= 1");
  if (!(tau_percentile > 0.0 && tau_percentile <= 100.0)) fail(Errc::config, "calibration.percentile must be in (0,100]");
  optim.validate();
}

std::string PipelineConfig::render() const {
  std::ostringstream os;
  os << "world.seed = " << world.seed << "\n"
     << "world.query_gain = " << fmt(world.query_gain) << "\n"
     << "world.unsafe_tilt = " << fmt(world.vocab.unsafe_tilt) << "\n"
     << "world.unsafe_cohesion = " << fmt(world.vocab.unsafe_cohesion) << "\n"
     << "world.background_cohesion = " << fmt(world.vocab.background_cohesion) << "\n"
     << "world.vocab_size = " << world.vocab.size << "\n"
     << "world.unsafe_count = " << world.vocab.unsafe_count << "\n"
     << "world.stopword_count = " << world.vocab.stopword_count << "\n"
     << "world.dim = " << world.vocab.dim << "\n"
     << "world.channels = " << world.shape.channels << "\n"
     << "world.height = " << world.shape.height << "\n"
     << "world.width = " << world.shape.width << "\n"
     << "sample_steps = " << world.sample_steps << "\n"
     << "guidance = " << fmt(guidance) << "\n"
     << "detector.gamma_det = " << fmt(feature.gamma_det) << "\n"
     << "detector.seed = " << feature.seed << "\n"
     << "detector.variant = " << to_string(feature.variant) << "\n"
     << "detector.svm_c = " << fmt(svm_regularization) << "\n"
     << "optim.alpha = " << fmt(optim.alpha) << "\n"
     << "optim.max_iters = " << optim.max_iters << "\n"
     << "optim.initial_step = " << fmt(optim.initial_step) << "\n"
     << "optim.backtrack = " << fmt(optim.backtrack) << "\n"
     << "optim.min_step = " << fmt(optim.min_step) << "\n"
     << "optim.renormalize = " << (optim.renormalize ? "true" : "false") << "\n"
     << "mode = " << to_string(mode) << "\n"
     << "provider = " << to_string(provider) << "\n"
     << "output_dir = " << output_dir.string() << "\n"
     << "model = " << model_path.string() << "\n"
     << "lexicon = " << lexicon_path.string() << "\n"
     << "noise_seed = " << noise_seed << "\n"
     << "calibration.samples = " << calibration_samples << "\n"
     << "calibration.percentile = " << fmt(tau_percentile) << "\n"
     << "calibration.tau = " << (tau ? fmt(*tau) : "") << "\n"
     << "threads = " << threads << "\n";
  return os.str();
}

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(Errc::config, "line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  return parse_config(read_text_file(path), std::move(base));
}

}  // namespace ndm
