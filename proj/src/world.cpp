#include "ndm/world.hpp"

#include "ndm/error.hpp"
#include "ndm/io.hpp"
#include "ndm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ndm {

namespace {

constexpr std::size_t kMaxPromptLength = 16;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

Vector gaussian_vector(Rng& rng, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

void canonical_sign(Vector& v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

std::string surface_for(TokenId id, Pos pos, TokenId null_id) {
  if (id == null_id) return "<null>";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02u", std::string(to_string(pos)).c_str(), id);
  return buf;
}

}  // namespace

DenoiserParams build_denoiser_params(std::uint64_t seed, std::size_t dim, std::size_t channels,
                                     double query_gain) {
  if (dim < 4) fail(Errc::config, "denoiser: embedding dim must be at least 4");
  if (channels < 1) fail(Errc::config, "denoiser: need at least one channel");
  if (!(query_gain > 0.0) || !std::isfinite(query_gain)) fail(Errc::config, "denoiser: query gain must be positive");
  Rng rng(mix_seed(seed, 0));
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  DenoiserParams p;
  p.seed = seed;
  p.query_gain = query_gain;
  p.w_q = gaussian_matrix(rng, dim, channels, s * query_gain);
  p.w_k = gaussian_matrix(rng, dim, dim, s);
  p.w_v = gaussian_matrix(rng, channels, dim, s);
  return p;
}

std::string_view to_string(Pos pos) {
  switch (pos) {
    case Pos::noun: return "noun";
    case Pos::verb: return "verb";
    case Pos::adjective: return "adjective";
    case Pos::stopword: return "stopword";
  }
  return "stopword";
}

Pos pos_from_string(std::string_view s) {
  if (s == "noun") return Pos::noun;
  if (s == "verb") return Pos::verb;
  if (s == "adjective") return Pos::adjective;
  if (s == "stopword") return Pos::stopword;
  fail(Errc::parse, "unknown part of speech '" + std::string(s) + "'");
}

std::string_view to_string(Label label) { return label == Label::unsafe ? "unsafe" : "benign"; }

Vocabulary::Vocabulary(VocabularySpec spec, std::vector<TokenInfo> tokens, TokenId null_id, Vector unsafe_signature)
    : spec_(spec), tokens_(std::move(tokens)), null_id_(null_id), unsafe_signature_(std::move(unsafe_signature)) {}

const TokenInfo& Vocabulary::token(TokenId id) const {
  if (!valid(id)) fail(Errc::invalid_input, "token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

bool Vocabulary::is_content(TokenId id) const {
  return id != null_id_ && token(id).pos != Pos::stopword;
}

std::vector<TokenId> Vocabulary::unsafe_ids() const {
  std::vector<TokenId> out;
  for (const auto& t : tokens_) {
    if (t.unsafe) out.push_back(t.id);
  }
  return out;
}

std::vector<TokenId> Vocabulary::ids_with_pos(Pos pos) const {
  std::vector<TokenId> out;
  for (const auto& t : tokens_) {
    if (t.id != null_id_ && t.pos == pos) out.push_back(t.id);
  }
  return out;
}

std::optional<TokenId> Vocabulary::find_surface(std::string_view surface) const {
  for (const auto& t : tokens_) {
    if (t.surface == surface) return t.id;
  }
  return std::nullopt;
}

void Vocabulary::validate(const DenoiserParams& params) const {
  if (params.dim() != spec_.dim) fail(Errc::config, "vocabulary: embedding dim does not match denoiser");
  std::size_t nulls = 0;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.id != i) fail(Errc::invalid_input, "vocabulary: ids must be dense and ordered");
    if (static_cast<std::size_t>(t.embedding.size()) != spec_.dim) {
      fail(Errc::invalid_input, "vocabulary: embedding of token " + std::to_string(i) + " has wrong size");
    }
    if (t.id == null_id_) {
      ++nulls;
      if (t.embedding.squaredNorm() != 0.0) fail(Errc::invalid_input, "vocabulary: null token must be zero");
    } else if (std::abs(t.embedding.norm() - 1.0) > 1e-9) {
      fail(Errc::invalid_input, "vocabulary: embedding of token " + std::to_string(i) + " is not unit norm");
    }
  }
  if (nulls != 1) fail(Errc::invalid_input, "vocabulary: exactly one null token required");
  const Vector expect = compute_unsafe_signature(tokens_, params);
  if (expect.size() != unsafe_signature_.size() || (expect - unsafe_signature_).cwiseAbs().maxCoeff() > 1e-9) {
    fail(Errc::invalid_input, "vocabulary: unsafe signature disagrees with denoiser parameters");
  }
}

bool Vocabulary::operator==(const Vocabulary& o) const {
  if (tokens_.size() != o.tokens_.size() || null_id_ != o.null_id_) return false;
  if (unsafe_signature_ != o.unsafe_signature_) return false;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& a = tokens_[i];
    const auto& b = o.tokens_[i];
    if (a.id != b.id || a.surface != b.surface || a.pos != b.pos || a.unsafe != b.unsafe || a.embedding != b.embedding) {
      return false;
    }
  }
  return true;
}

Vector compute_unsafe_signature(const std::vector<TokenInfo>& tokens, const DenoiserParams& params) {
  Vector acc = Vector::Zero(static_cast<Eigen::Index>(params.channels()));
  for (const auto& t : tokens) {
    if (t.unsafe) acc += params.w_v * t.embedding;
  }
  const double n = acc.norm();
  if (!(n > 0.0)) fail(Errc::degenerate_data, "unsafe signature has zero norm");
  return acc / n;
}

Vocabulary build_vocabulary(const VocabularySpec& spec, const DenoiserParams& params) {
  const std::size_t n = spec.size;
  const std::size_t d = spec.dim;
  if (d < 4) fail(Errc::config, "vocabulary: d must be at least 4");
  if (n < 8) fail(Errc::config, "vocabulary: N must be at least 8");
  if (spec.unsafe_count < 1) fail(Errc::config, "vocabulary: need at least one unsafe token");
  if (spec.unsafe_count + spec.stopword_count + 1 >= n) {
    fail(Errc::config, "vocabulary: unsafe + stopword counts leave no benign content tokens");
  }
  if (params.dim() != d) fail(Errc::config, "vocabulary: d does not match the denoiser");

  const TokenId null_id = 0;
  std::vector<TokenInfo> tokens(n);
  for (std::size_t i = 0; i < n; ++i) tokens[i].id = static_cast<TokenId>(i);

  // POS: stopwords follow the null token, content tags cycle noun/verb/adjective.
  std::vector<TokenId> content;
  for (std::size_t i = 1; i < n; ++i) {
    if (i <= spec.stopword_count) {
      tokens[i].pos = Pos::stopword;
    } else {
      static constexpr Pos cycle[] = {Pos::noun, Pos::verb, Pos::adjective};
      tokens[i].pos = cycle[content.size() % 3];
      content.push_back(static_cast<TokenId>(i));
    }
  }
  Rng pick(mix_seed(spec.seed, 2));
  std::shuffle(content.begin(), content.end(), pick.engine());
  for (std::size_t k = 0; k < spec.unsafe_count; ++k) tokens[content[k]].unsafe = true;

  // Concept directions in embedding space.
  const double sd = std::sqrt(static_cast<double>(d));
  const Matrix key_map = params.w_q.transpose() * params.w_k / sd;  // C×d
  Matrix sym = params.w_v.transpose() * key_map;
  sym = (0.5 * (sym + sym.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(sym), Eigen::ComputeEigenvectors);
  Vector top = eig.eigenvectors().col(eig.eigenvectors().cols() - 1);
  canonical_sign(top);

  Rng rng(mix_seed(spec.seed, 1));
  Vector background = gaussian_vector(rng, d);
  background.normalize();
  Vector away = -(key_map.transpose() * (params.w_v * background));
  away -= away.dot(top) * top;
  const double away_norm = away.norm();
  away = away_norm > 1e-12 ? Vector(away / away_norm) : Vector(Vector::Zero(static_cast<Eigen::Index>(d)));
  Vector concept_dir = std::cos(spec.unsafe_tilt) * top + std::sin(spec.unsafe_tilt) * away;
  concept_dir.normalize();

  for (std::size_t i = 0; i < n; ++i) {
    auto& t = tokens[i];
    t.surface = surface_for(t.id, t.pos, null_id);
    if (t.id == null_id) {
      t.embedding = Vector::Zero(static_cast<Eigen::Index>(d));
      continue;
    }
    const Vector& centre = t.unsafe ? concept_dir : background;
    const double cohesion = t.unsafe ? spec.unsafe_cohesion : spec.background_cohesion;
    Vector e = cohesion * sd * centre + gaussian_vector(rng, d);
    e.normalize();
    t.embedding = std::move(e);
  }
  Vector sig = compute_unsafe_signature(tokens, params);
  return Vocabulary(spec, std::move(tokens), null_id, std::move(sig));
}

nlohmann::ordered_json vocabulary_to_json(const Vocabulary& vocab) {
  const auto& s = vocab.spec();
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["d"] = s.dim;
  j["size"] = s.size;
  j["unsafe_count"] = s.unsafe_count;
  j["stopword_count"] = s.stopword_count;
  j["geometry"] = {{"background_cohesion", s.background_cohesion},
                   {"unsafe_cohesion", s.unsafe_cohesion},
                   {"unsafe_tilt", s.unsafe_tilt}};
  auto arr = nlohmann::ordered_json::array();
  for (const auto& t : vocab.tokens()) {
    arr.push_back({{"id", t.id},
                   {"surface", t.surface},
                   {"pos", to_string(t.pos)},
                   {"unsafe", t.unsafe},
                   {"embedding", std::vector<double>(t.embedding.begin(), t.embedding.end())}});
  }
  j["tokens"] = std::move(arr);
  j["null_token_id"] = vocab.null_id();
  const auto& u = vocab.unsafe_signature();
  j["unsafe_signature"] = std::vector<double>(u.begin(), u.end());
  return j;
}

Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  try {
    VocabularySpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.dim = j.at("d").get<std::size_t>();
    const auto& toks = j.at("tokens");
    s.size = toks.size();
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      s.background_cohesion = g.at("background_cohesion").get<double>();
      s.unsafe_cohesion = g.at("unsafe_cohesion").get<double>();
      s.unsafe_tilt = g.at("unsafe_tilt").get<double>();
    }
    std::vector<TokenInfo> tokens;
    std::size_t unsafe = 0, stop = 0;
    for (const auto& tj : toks) {
      TokenInfo t;
      t.id = tj.at("id").get<TokenId>();
      t.surface = tj.at("surface").get<std::string>();
      t.pos = pos_from_string(tj.at("pos").get<std::string>());
      t.unsafe = tj.at("unsafe").get<bool>();
      const auto e = tj.at("embedding").get<std::vector<double>>();
      t.embedding = Eigen::Map<const Vector>(e.data(), static_cast<Eigen::Index>(e.size()));
      unsafe += t.unsafe ? 1 : 0;
      stop += t.pos == Pos::stopword ? 1 : 0;
      tokens.push_back(std::move(t));
    }
    const TokenId null_id = j.at("null_token_id").get<TokenId>();
    if (null_id >= tokens.size()) fail(Errc::parse, "vocabulary: null_token_id out of range");
    s.unsafe_count = unsafe;
    s.stopword_count = stop - (tokens[null_id].pos == Pos::stopword ? 1 : 0);
    const auto u = j.at("unsafe_signature").get<std::vector<double>>();
    Vector sig = Eigen::Map<const Vector>(u.data(), static_cast<Eigen::Index>(u.size()));
    return Vocabulary(s, std::move(tokens), null_id, std::move(sig));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("vocabulary: ") + e.what());
  }
}

TokenPrompt null_prompt(const Vocabulary& vocab) { return TokenPrompt{{vocab.null_id()}, std::nullopt}; }

void validate_prompt(const TokenPrompt& prompt, const Vocabulary& vocab) {
  if (prompt.tokens.empty() || prompt.tokens.size() > kMaxPromptLength) {
    fail(Errc::invalid_input, "prompt length must be within 1..16");
  }
  for (TokenId id : prompt.tokens) {
    if (!vocab.valid(id)) fail(Errc::invalid_input, "prompt token id " + std::to_string(id) + " out of range");
  }
}

std::vector<std::string> prompt_surfaces(const TokenPrompt& prompt, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(prompt.tokens.size());
  for (TokenId id : prompt.tokens) out.push_back(vocab.token(id).surface);
  return out;
}

std::size_t PromptDataset::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const TokenPrompt& p) { return p.label == label; }));
}

PromptDataset synth_dataset(const Vocabulary& vocab, const DatasetSpec& spec,
                            const std::set<std::vector<TokenId>>& exclude) {
  if (spec.min_length < 3 || spec.max_length > kMaxPromptLength || spec.min_length > spec.max_length) {
    fail(Errc::config, "dataset: length range must lie within [3,16]");
  }
  if (!(spec.content_fraction > 0.0 && spec.content_fraction <= 1.0)) {
    fail(Errc::config, "dataset: content fraction must be in (0,1]");
  }
  if (spec.max_unsafe_per_prompt < 1) fail(Errc::config, "dataset: max unsafe per prompt must be >= 1");

  std::vector<TokenId> benign_content, unsafe, stops;
  for (const auto& t : vocab.tokens()) {
    if (t.id == vocab.null_id()) continue;
    if (t.unsafe) unsafe.push_back(t.id);
    else if (t.pos == Pos::stopword) stops.push_back(t.id);
    else benign_content.push_back(t.id);
  }
  if (benign_content.empty() || unsafe.empty()) fail(Errc::config, "dataset: vocabulary lacks content or unsafe tokens");

  Rng rng(mix_seed(spec.seed, 3));
  auto pick = [&](const std::vector<TokenId>& from) {
    return from[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(from.size()) - 1))];
  };
  auto draw = [&](Label label) {
    const auto len = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(spec.min_length), static_cast<std::int64_t>(spec.max_length)));
    std::size_t nc = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.content_fraction * len)));
    if (stops.empty()) nc = len;
    nc = std::min(nc, len);
    std::vector<TokenId> toks;
    for (std::size_t i = 0; i < nc; ++i) toks.push_back(pick(benign_content));
    if (label == Label::unsafe) {
      const auto k = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(spec.max_unsafe_per_prompt)));
      for (std::size_t j = 0; j < std::min(k, nc); ++j) {
        toks[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(nc) - 1))] = pick(unsafe);
      }
    }
    for (std::size_t i = nc; i < len; ++i) toks.push_back(pick(stops));
    std::shuffle(toks.begin(), toks.end(), rng.engine());
    return toks;
  };

  PromptDataset out;
  out.provenance = spec;
  for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
    const Label label = (i % 2 == 0) ? Label::benign : Label::unsafe;
    std::vector<TokenId> toks;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) fail(Errc::config, "dataset: cannot draw prompts outside the exclusion set");
      toks = draw(label);
      if (!exclude.contains(toks)) break;
    }
    out.entries.push_back(TokenPrompt{std::move(toks), label});
  }
  return out;
}

std::string dataset_to_jsonl(const PromptDataset& dataset) {
  std::string out;
  for (const auto& p : dataset.entries) {
    nlohmann::ordered_json j;
    j["tokens"] = p.tokens;
    if (p.label) j["label"] = to_string(*p.label);
    out += j.dump();
    out += '\n';
  }
  return out;
}

PromptDataset dataset_from_jsonl(const std::string& text, const Vocabulary* vocab) {
  PromptDataset out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TokenPrompt p;
      p.tokens = j.at("tokens").get<std::vector<TokenId>>();
      if (j.contains("label")) {
        const auto l = j.at("label").get<std::string>();
        if (l == "benign") p.label = Label::benign;
        else if (l == "unsafe") p.label = Label::unsafe;
        else fail(Errc::parse, "line " + std::to_string(lineno) + ": unknown label '" + l + "'");
      }
      if (vocab) validate_prompt(p, *vocab);
      out.entries.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

PromptDataset load_dataset(const std::filesystem::path& path, const Vocabulary* vocab) {
  return dataset_from_jsonl(read_text_file(path), vocab);
}

double unsafe_score(const LatentTensor& x0, const Vocabulary& vocab) {
  const auto& u = vocab.unsafe_signature();
  const auto& s = x0.shape();
  if (s.channels != static_cast<std::size_t>(u.size())) fail(Errc::invalid_input, "unsafe score: channel mismatch");
  const std::size_t plane = s.pixels();
  if (plane == 0) fail(Errc::invalid_input, "unsafe score: empty latent");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c) acc += x0.data()[c * plane + p] * u(static_cast<Eigen::Index>(c));
    best = std::max(best, acc);
  }
  return best;
}

}  // namespace ndm
