#pragma once

// Toy autoregressive token policy: a single tanh recurrence over a 46-token
// vocabulary, conditioned on 8x8 pooled image features.
//
//   h_0 = tanh(W_f f + b)
//   h_t = tanh(W_h h_{t-1} + W_e E[tok_{t-1}] + W_f f + b)
//   p(tok_t) = softmax(U h_t)

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prompt.hpp"
#include "raster.hpp"
#include "rng.hpp"

namespace segrl {

// ---------------------------------------------------------------------------
// Vocabulary

namespace tok {
inline constexpr int kThinkOpen = 0;
inline constexpr int kThinkClose = 1;
inline constexpr int kBboxOpen = 2;
inline constexpr int kBboxClose = 3;
inline constexpr int kPointsOpen = 4;
inline constexpr int kPointsClose = 5;
inline constexpr int kLabelsOpen = 6;
inline constexpr int kLabelsClose = 7;
inline constexpr int kBin0 = 8;  // 8..39
inline constexpr int kNumBins = 32;
inline constexpr int kComma = 40;
inline constexpr int kSemicolon = 41;
inline constexpr int kLabel0 = 42;
inline constexpr int kLabel1 = 43;
inline constexpr int kFiller = 44;
inline constexpr int kEos = 45;
inline constexpr int kVocabSize = 46;

inline constexpr int bin(int k) { return kBin0 + k; }
inline constexpr bool is_bin(int t) { return t >= kBin0 && t < kBin0 + kNumBins; }
}  // namespace tok

inline constexpr const char* kFillerWord = "obj";
inline constexpr int kMaxSequenceLength = 96;

/// Pixel center of coordinate bin k along an axis of length `dim`.
inline int bin_to_pixel(int k, int dim) { return (2 * k + 1) * dim / 64; }

/// Nearest bin for a pixel coordinate.
inline int pixel_to_bin(int p, int dim) {
  int best = 0;
  for (int k = 1; k < tok::kNumBins; ++k)
    if (std::abs(bin_to_pixel(k, dim) - p) < std::abs(bin_to_pixel(best, dim) - p)) best = k;
  return best;
}

inline std::string token_name(int t) {
  static const char* tags[] = {"<think>", "</think>", "<bbox>", "</bbox>", "<points>", "</points>", "<labels>", "</labels>"};
  if (t >= 0 && t < 8) return tags[t];
  if (tok::is_bin(t)) return "bin" + std::to_string(t - tok::kBin0);
  switch (t) {
    case tok::kComma: return ",";
    case tok::kSemicolon: return ";";
    case tok::kLabel0: return "L0";
    case tok::kLabel1: return "L1";
    case tok::kFiller: return "T";
    case tok::kEos: return "EOS";
    default: return "?";
  }
}

/// Renders tokens as tagged text. Bins alternate x/y inside <bbox> and within
/// each point; elsewhere they render along the x axis.
inline std::string decode(std::span<const int> tokens, int width, int height) {
  std::string out;
  int coord_index = 0;
  for (int t : tokens) {
    if (tok::is_bin(t)) {
      const int k = t - tok::kBin0;
      out += std::to_string(bin_to_pixel(k, coord_index % 2 == 0 ? width : height));
      ++coord_index;
      continue;
    }
    switch (t) {
      case tok::kBboxOpen:
      case tok::kPointsOpen:
      case tok::kSemicolon: coord_index = 0; break;
      default: break;
    }
    if (t >= 0 && t < 8) {
      out += token_name(t);
    } else if (t == tok::kComma) {
      out += ',';
    } else if (t == tok::kSemicolon) {
      out += ';';
    } else if (t == tok::kLabel0) {
      out += '0';
    } else if (t == tok::kLabel1) {
      out += '1';
    } else if (t == tok::kFiller) {
      out += kFillerWord;
    }
  }
  return out;
}

/// Token form of a prompt, coordinates snapped to the nearest bin.
inline std::vector<int> encode(const MaskPrompt& p, int width, int height, int filler_count = 1) {
  std::vector<int> t{tok::kThinkOpen};
  for (int i = 0; i < filler_count; ++i) t.push_back(tok::kFiller);
  t.push_back(tok::kThinkClose);
  if (p.bbox) {
    t.insert(t.end(), {tok::kBboxOpen, tok::bin(pixel_to_bin(p.bbox->x1, width)), tok::kComma,
                       tok::bin(pixel_to_bin(p.bbox->y1, height)), tok::kComma,
                       tok::bin(pixel_to_bin(p.bbox->x2, width)), tok::kComma,
                       tok::bin(pixel_to_bin(p.bbox->y2, height)), tok::kBboxClose});
  }
  t.push_back(tok::kPointsOpen);
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    if (i) t.push_back(tok::kSemicolon);
    t.insert(t.end(), {tok::bin(pixel_to_bin(p.points[i].x, width)), tok::kComma,
                       tok::bin(pixel_to_bin(p.points[i].y, height))});
  }
  t.push_back(tok::kPointsClose);
  t.push_back(tok::kLabelsOpen);
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    if (i) t.push_back(tok::kComma);
    t.push_back(p.labels[i] ? tok::kLabel1 : tok::kLabel0);
  }
  t.push_back(tok::kLabelsClose);
  t.push_back(tok::kEos);
  return t;
}

// ---------------------------------------------------------------------------
// Scene features

inline constexpr int kFeatureGrid = 8;
inline constexpr int kFeatureDim = kFeatureGrid * kFeatureGrid;
using Features = std::array<double, kFeatureDim>;

/// 8x8 block means scaled to [0, 1]. Images whose sides are not multiples of 8
/// are padded by replicating the last row/column.
inline Features scene_features(const GrayImage& img) {
  const int pw = (img.width() + kFeatureGrid - 1) / kFeatureGrid * kFeatureGrid;
  const int ph = (img.height() + kFeatureGrid - 1) / kFeatureGrid * kFeatureGrid;
  const int bw = pw / kFeatureGrid;
  const int bh = ph / kFeatureGrid;
  Features f{};
  for (int gy = 0; gy < kFeatureGrid; ++gy)
    for (int gx = 0; gx < kFeatureGrid; ++gx) {
      long sum = 0;
      for (int y = gy * bh; y < (gy + 1) * bh; ++y)
        for (int x = gx * bw; x < (gx + 1) * bw; ++x)
          sum += img.at(std::min(x, img.width() - 1), std::min(y, img.height() - 1));
      f[gy * kFeatureGrid + gx] = static_cast<double>(sum) / (static_cast<double>(bw) * bh * 255.0);
    }
  return f;
}

// ---------------------------------------------------------------------------
// Parameters

/// All weights in one flat buffer, in checkpoint order: E (V x H), W_h (H x H),
/// W_e (H x H), W_f (H x D), b (H), U (V x H); each matrix row-major.
class PolicyParams {
 public:
  static constexpr int V = tok::kVocabSize;
  static constexpr int H = 32;
  static constexpr int D = kFeatureDim;

  static constexpr std::size_t kOffE = 0;
  static constexpr std::size_t kOffWh = kOffE + V * H;
  static constexpr std::size_t kOffWe = kOffWh + H * H;
  static constexpr std::size_t kOffWf = kOffWe + H * H;
  static constexpr std::size_t kOffB = kOffWf + H * D;
  static constexpr std::size_t kOffU = kOffB + H;
  static constexpr std::size_t kSize = kOffU + V * H;

  PolicyParams() : theta_(kSize, 0.0) {}

  /// Uniform(+-scale) weights, zero bias.
  static PolicyParams random(std::uint64_t seed, double scale = 0.08) {
    PolicyParams p;
    Rng rng(seed);
    for (std::size_t i = 0; i < kSize; ++i) {
      if (i >= kOffB && i < kOffU) continue;
      p.theta_[i] = rng.uniform(-scale, scale);
    }
    return p;
  }

  std::size_t size() const { return kSize; }
  std::span<double> flat() { return theta_; }
  std::span<const double> flat() const { return theta_; }
  double& operator[](std::size_t i) { return theta_[i]; }
  double operator[](std::size_t i) const { return theta_[i]; }

  const double* E(int v) const { return &theta_[kOffE + static_cast<std::size_t>(v) * H]; }
  const double* Wh() const { return &theta_[kOffWh]; }
  const double* We() const { return &theta_[kOffWe]; }
  const double* Wf() const { return &theta_[kOffWf]; }
  const double* b() const { return &theta_[kOffB]; }
  const double* U() const { return &theta_[kOffU]; }
  double* E(int v) { return &theta_[kOffE + static_cast<std::size_t>(v) * H]; }
  double* Wh() { return &theta_[kOffWh]; }
  double* We() { return &theta_[kOffWe]; }
  double* Wf() { return &theta_[kOffWf]; }
  double* b() { return &theta_[kOffB]; }
  double* U() { return &theta_[kOffU]; }

  /// this += alpha * other
  void axpy(double alpha, const PolicyParams& other) {
    for (std::size_t i = 0; i < kSize; ++i) theta_[i] += alpha * other.theta_[i];
  }
  void set_zero() { std::fill(theta_.begin(), theta_.end(), 0.0); }
  bool all_finite() const {
    return std::all_of(theta_.begin(), theta_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

using Hidden = std::array<double, PolicyParams::H>;
using Logits = std::array<double, PolicyParams::V>;

// W_f f + b, shared by every step.
inline Hidden feature_drive(const PolicyParams& p, const Features& f) {
  Hidden out{};
  const double* wf = p.Wf();
  for (int i = 0; i < PolicyParams::H; ++i) {
    double acc = p.b()[i];
    for (int j = 0; j < PolicyParams::D; ++j) acc += wf[i * PolicyParams::D + j] * f[j];
    out[i] = acc;
  }
  return out;
}

// prev_token < 0 marks the first step.
inline Hidden step_hidden(const PolicyParams& p, const Hidden& drive, const Hidden* prev_h, int prev_token) {
  Hidden h{};
  constexpr int H = PolicyParams::H;
  for (int i = 0; i < H; ++i) {
    double acc = drive[i];
    if (prev_h) {
      const double* wh = p.Wh() + i * H;
      const double* we = p.We() + i * H;
      const double* e = p.E(prev_token);
      for (int j = 0; j < H; ++j) acc += wh[j] * (*prev_h)[j] + we[j] * e[j];
    }
    h[i] = std::tanh(acc);
  }
  return h;
}

// Log-softmax of U h.
inline Logits step_log_probs(const PolicyParams& p, const Hidden& h) {
  Logits z{};
  constexpr int H = PolicyParams::H;
  double mx = -1e300;
  for (int v = 0; v < PolicyParams::V; ++v) {
    const double* u = p.U() + v * H;
    double acc = 0.0;
    for (int j = 0; j < H; ++j) acc += u[j] * h[j];
    z[v] = acc;
    mx = std::max(mx, acc);
  }
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
  return z;
}

inline void check_tokens_allow_empty(std::span<const int> tokens) {
  for (int t : tokens)
    if (t < 0 || t >= tok::kVocabSize) throw std::invalid_argument("log_prob: invalid token id " + std::to_string(t));
}

inline void check_tokens(std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("log_prob: empty token sequence");
  check_tokens_allow_empty(tokens);
}

}  // namespace detail

struct TokenSequence {
  std::vector<int> tokens;
  std::vector<double> logps;

  bool terminated() const { return !tokens.empty() && tokens.back() == tok::kEos; }
  double total_logp() const {
    double s = 0.0;
    for (double v : logps) s += v;
    return s;
  }
};

/// The query fed ahead of generation: the policy has no language channel, so
/// the instruction collapses to one tag token naming the first section the
/// stage asks for beyond the think block. Context tokens run through the same
/// recurrence as generated ones but carry no log-probability.
inline std::vector<int> stage_query(PromptStage stage) {
  return {stage == PromptStage::BoxAndPoints ? tok::kBboxOpen : tok::kPointsOpen};
}

namespace detail {

// Feeds the context, leaving h on the state that emits the first response
// token. Returns the token consumed by that step (-1 when there is none).
inline int run_context(const PolicyParams& p, const Hidden& drive, std::span<const int> context, Hidden& h) {
  int prev = -1;
  for (std::size_t t = 0; t < context.size(); ++t) {
    h = step_hidden(p, drive, t == 0 ? nullptr : &h, prev);
    prev = context[t];
  }
  return prev;
}

template <typename Pick>
TokenSequence generate(const PolicyParams& p, const Features& f, int max_len, std::span<const int> context, Pick pick) {
  check_tokens_allow_empty(context);
  TokenSequence seq;
  const auto drive = feature_drive(p, f);
  Hidden h{};
  int prev = run_context(p, drive, context, h);
  bool first = context.empty();
  for (int t = 0; t < max_len; ++t) {
    h = step_hidden(p, drive, first ? nullptr : &h, prev);
    first = false;
    const auto lp = step_log_probs(p, h);
    const int chosen = pick(lp);
    seq.tokens.push_back(chosen);
    seq.logps.push_back(lp[chosen]);
    prev = chosen;
    if (chosen == tok::kEos) break;
  }
  return seq;
}

}  // namespace detail

/// Ancestral sampling until EOS or the length cap.
inline TokenSequence sample(const PolicyParams& p, const Features& f, Rng& rng, int max_len = kMaxSequenceLength,
                            std::span<const int> context = {}) {
  return detail::generate(p, f, max_len, context, [&](const detail::Logits& lp) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int v = 0; v < tok::kVocabSize; ++v) {
      acc += std::exp(lp[v]);
      if (u < acc) return v;
    }
    return tok::kVocabSize - 1;
  });
}

/// Argmax decoding (lowest id wins ties).
inline TokenSequence greedy(const PolicyParams& p, const Features& f, int max_len = kMaxSequenceLength,
                            std::span<const int> context = {}) {
  return detail::generate(p, f, max_len, context, [](const detail::Logits& lp) {
    return static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  });
}

/// Per-step log-probability distributions under teacher forcing; entry t is
/// the distribution that emitted tokens[t].
inline std::vector<detail::Logits> step_distributions(const PolicyParams& p, const Features& f,
                                                      std::span<const int> tokens, std::span<const int> context = {}) {
  detail::check_tokens(tokens);
  detail::check_tokens_allow_empty(context);
  std::vector<detail::Logits> out;
  const auto drive = detail::feature_drive(p, f);
  detail::Hidden h{};
  int prev = detail::run_context(p, drive, context, h);
  bool first = context.empty();
  for (int t : tokens) {
    h = detail::step_hidden(p, drive, first ? nullptr : &h, prev);
    first = false;
    out.push_back(detail::step_log_probs(p, h));
    prev = t;
  }
  return out;
}

/// Sum of teacher-forced log-probabilities of `tokens` given the context.
inline double log_prob(const PolicyParams& p, const Features& f, std::span<const int> tokens,
                       std::span<const int> context = {}) {
  const auto dists = step_distributions(p, f, tokens, context);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) total += dists[t][tokens[t]];
  return total;
}

/// Returns log_prob and adds scale * d(log_prob)/d(theta) into `grad`
/// (backpropagation through time, through the context steps too).
inline double accumulate_log_prob_grad(const PolicyParams& p, const Features& f, std::span<const int> tokens,
                                       double scale, PolicyParams& grad, std::span<const int> context = {}) {
  detail::check_tokens(tokens);
  detail::check_tokens_allow_empty(context);
  constexpr int H = PolicyParams::H;
  constexpr int V = PolicyParams::V;
  constexpr int D = PolicyParams::D;
  std::vector<int> full(context.begin(), context.end());
  full.insert(full.end(), tokens.begin(), tokens.end());
  const std::size_t C = context.size();
  const std::size_t T = full.size();
  const auto drive = detail::feature_drive(p, f);
  std::vector<detail::Hidden> hs(T);
  std::vector<detail::Logits> lps(T);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    hs[t] = detail::step_hidden(p, drive, t == 0 ? nullptr : &hs[t - 1], t == 0 ? -1 : full[t - 1]);
    if (t >= C) {  // context positions are not scored
      lps[t] = detail::step_log_probs(p, hs[t]);
      total += lps[t][full[t]];
    }
  }
  if (scale == 0.0) return total;

  detail::Hidden dh_next{};
  detail::Hidden da_sum{};  // b and W_f see the same input every step
  for (std::size_t t = T; t-- > 0;) {
    const auto& h = hs[t];
    detail::Hidden dh = dh_next;
    if (t >= C) {
      double* gU = grad.U();
      const double* U = p.U();
      for (int v = 0; v < V; ++v) {
        const double g = scale * ((v == full[t] ? 1.0 : 0.0) - std::exp(lps[t][v]));
        if (g == 0.0) continue;
        for (int j = 0; j < H; ++j) {
          gU[v * H + j] += g * h[j];
          dh[j] += U[v * H + j] * g;
        }
      }
    }
    detail::Hidden da{};
    for (int i = 0; i < H; ++i) {
      da[i] = dh[i] * (1.0 - h[i] * h[i]);
      da_sum[i] += da[i];
    }
    dh_next.fill(0.0);
    if (t > 0) {
      const auto& hp = hs[t - 1];
      const int prev = full[t - 1];
      const double* e = p.E(prev);
      double* gE = grad.E(prev);
      double* gWh = grad.Wh();
      double* gWe = grad.We();
      const double* Wh = p.Wh();
      const double* We = p.We();
      for (int i = 0; i < H; ++i) {
        const double a = da[i];
        for (int j = 0; j < H; ++j) {
          gWh[i * H + j] += a * hp[j];
          gWe[i * H + j] += a * e[j];
          gE[j] += We[i * H + j] * a;
          dh_next[j] += Wh[i * H + j] * a;
        }
      }
    }
  }
  double* gb = grad.b();
  double* gWf = grad.Wf();
  for (int i = 0; i < H; ++i) {
    gb[i] += da_sum[i];
    for (int j = 0; j < D; ++j) gWf[i * D + j] += da_sum[i] * f[j];
  }
  return total;
}

inline PolicyParams grad_log_prob(const PolicyParams& p, const Features& f, std::span<const int> tokens,
                                  std::span<const int> context = {}) {
  PolicyParams g;
  accumulate_log_prob_grad(p, f, tokens, 1.0, g, context);
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint: "SEGRLPOL" | u32 version | u32 V | u32 H | u32 D | f64[kSize] LE

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'R', 'L', 'P', 'O', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}
template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}
}  // namespace detail

inline std::string serialize_params(const PolicyParams& p) {
  std::string out(kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, PolicyParams::V);
  detail::put_le<std::uint32_t>(out, PolicyParams::H);
  detail::put_le<std::uint32_t>(out, PolicyParams::D);
  for (double v : p.flat()) detail::put_le<double>(out, v);
  return out;
}

inline PolicyParams deserialize_params(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic");
  std::size_t pos = 8;
  if (detail::get_le<std::uint32_t>(bytes, pos) != kCheckpointVersion) throw IoError("checkpoint: unsupported version");
  const auto v = detail::get_le<std::uint32_t>(bytes, pos);
  const auto h = detail::get_le<std::uint32_t>(bytes, pos);
  const auto d = detail::get_le<std::uint32_t>(bytes, pos);
  if (v != PolicyParams::V || h != PolicyParams::H || d != PolicyParams::D) throw IoError("checkpoint: shape mismatch");
  PolicyParams p;
  for (auto& x : p.flat()) x = detail::get_le<double>(bytes, pos);
  if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  return p;
}

inline void save_params(const std::filesystem::path& path, const PolicyParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = serialize_params(p);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline PolicyParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_params(bytes);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + ": " + path.string());
  }
}

}  // namespace segrl
