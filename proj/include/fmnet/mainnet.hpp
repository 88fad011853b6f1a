#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fmnet/errors.hpp"
#include "fmnet/io.hpp"
#include "fmnet/tape.hpp"
#include "fmnet/tensor.hpp"

namespace fmnet {

inline const std::array<std::string, 3> kLevels = {"low", "middle", "high"};

struct VehicleState {
  double angle = 0;   // rad
  double speed = 0;   // m/s
  double torque = 0;  // N*m
};

struct MainNetConfig {
  std::vector<std::size_t> block_widths{8, 16, 32};
  std::size_t depth = 2;  // residual blocks per stage
  std::size_t clip_len = 10;
  std::size_t lstm_hidden = 16;
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t fc_dim = 16;
  std::size_t temporal_kernel = 3;
  std::size_t stem_pool = 1;  // spatial mean-pool factor applied before the stem conv
  // level -> stage index whose output is tapped
  std::map<std::string, std::size_t> tap_points{{"low", 0}, {"middle", 1}, {"high", 2}};

  void validate() const {
    if (block_widths.empty()) throw ConfigError("mainnet: block_widths must be non-empty");
    for (std::size_t w : block_widths)
      if (w < 1) throw ConfigError("mainnet: widths must be >= 1");
    if (depth < 1 || clip_len < 1 || lstm_hidden < 1 || fc_dim < 1)
      throw ConfigError("mainnet: depth, clip_len, lstm_hidden, fc_dim must be >= 1");
    if (temporal_kernel % 2 == 0) throw ConfigError("mainnet: temporal_kernel must be odd");
    if (tap_points.size() != 3)
      throw ConfigError("mainnet: exactly three tap points required, got " +
                        std::to_string(tap_points.size()));
    for (const auto& lvl : kLevels) {
      auto it = tap_points.find(lvl);
      if (it == tap_points.end()) throw ConfigError("mainnet: missing tap point for level " + lvl);
      if (it->second >= block_widths.size())
        throw ConfigError("mainnet: tap point for " + lvl + " binds to nonexistent stage " +
                          std::to_string(it->second));
    }
    if (input_h % stem_pool != 0 || input_w % stem_pool != 0)
      throw ConfigError("mainnet: stem_pool must divide input dims");
  }

  // Spatial size of the tap at `level` (stem conv stride 2, then stride 2
  // at each later stage entry).
  std::array<std::size_t, 3> tap_dims(const std::string& level) const {
    const std::size_t stage = tap_points.at(level);
    std::size_t h = input_h / stem_pool, w = input_w / stem_pool;
    h = (h + 1) / 2;  // stem, stride 2 pad 1 k 3
    w = (w + 1) / 2;
    for (std::size_t s = 1; s <= stage; ++s) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    return {h, w, block_widths[stage]};
  }
};

// Replicate a kxkxCixCo kernel w_t times along time and divide by w_t, so a
// temporally constant input produces the 2D response.
template <class T>
Tensor<T> inflate(const Tensor<T>& k2d, std::size_t wt) {
  if (k2d.ndim() != 4) throw ConfigError("inflate expects a kxkxCixCo kernel");
  if (wt < 1 || wt % 2 == 0) throw ConfigError("inflate: temporal size must be odd and >= 1");
  Tensor<T> out({wt, k2d.shape[0], k2d.shape[1], k2d.shape[2], k2d.shape[3]});
  const std::size_t n = k2d.numel();
  const T inv = T(1) / static_cast<T>(wt);
  for (std::size_t t = 0; t < wt; ++t)
    for (std::size_t i = 0; i < n; ++i) out[t * n + i] = k2d[i] * inv;
  return out;
}

template <class T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

template <class T>
struct NetOutput {
  VehicleState prediction;                       // last frame
  std::vector<std::array<double, 3>> per_frame;  // normalized (angle, speed, torque)
  std::map<std::string, Tensor<T>> taps;         // level -> e_j (HxWxC, time-averaged)
  LstmState<T> lstm_state;
};

namespace detail {

struct ConvSpec {
  std::string name;
  std::size_t in_ch, out_ch, k, stride;
  bool has_relu_before_add;  // unused marker; structure is fixed in the walkers
};

}  // namespace detail

// The FM main network: inflated 3D residual trunk + per-frame FC + LSTM +
// three regression heads. Stateless; parameters live in a ParamStore.
template <class T>
class MainNet {
 public:
  using Ref = typename Tape<T>::Ref;
  using RefMap = std::map<std::string, Ref>;

  explicit MainNet(MainNetConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const MainNetConfig& config() const { return cfg_; }

  // Seed-deterministic 2D parameter set: kxkxCixCo trunk kernels plus all
  // non-conv parameters (FC, LSTM, heads). Uniform init scaled by fan-in.
  static ParamStore<T> build2d(const MainNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParamStore<T> ps;
    auto uni = [&](Shape shape, std::size_t fan_in) {
      Tensor<T> t(shape);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> d(-bound, bound);
      for (T& v : t.data) v = static_cast<T>(d(rng));
      return t;
    };
    // trunk
    ps.add("trunk.stem.w", uni({3, 3, 3, cfg.block_widths[0]}, 3 * 3 * 3));
    for (std::size_t s = 0; s < cfg.block_widths.size(); ++s) {
      const std::size_t cin_stage = s == 0 ? cfg.block_widths[0] : cfg.block_widths[s - 1];
      const std::size_t c = cfg.block_widths[s];
      for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::size_t cin = b == 0 ? cin_stage : c;
        const std::string p = "trunk.s" + std::to_string(s) + ".b" + std::to_string(b);
        ps.add(p + ".conv1.w", uni({3, 3, cin, c}, 3 * 3 * cin));
        ps.add(p + ".conv2.w", uni({3, 3, c, c}, 3 * 3 * c));
        const bool strided = (s > 0 && b == 0);
        if (cin != c || strided) ps.add(p + ".proj.w", uni({1, 1, cin, c}, cin));
      }
    }
    // per-frame FC
    const std::size_t c_last = cfg.block_widths.back();
    ps.add("fc.w", uni({c_last, cfg.fc_dim}, c_last));
    ps.add("fc.b", Tensor<T>({cfg.fc_dim}));
    // LSTM (gate order i, f, g, o); input = fc output + 3 previous-state values
    const std::size_t in = cfg.fc_dim + 3, hid = cfg.lstm_hidden;
    for (const char* g : {"i", "f", "g", "o"}) {
      ps.add(std::string("lstm.wx") + g, uni({in, hid}, in));
      ps.add(std::string("lstm.wh") + g, uni({hid, hid}, hid));
      ps.add(std::string("lstm.b") + g, Tensor<T>({hid}));
    }
    // heads
    for (const char* h : {"angle", "speed", "torque"}) {
      ps.add(std::string("head.") + h + ".w", uni({hid, 1}, hid));
      ps.add(std::string("head.") + h + ".b", Tensor<T>({1}));
    }
    return ps;
  }

  // Full 3D parameter set: build2d, then inflate every trunk kernel along
  // time (temporal size 1 for the 1x1 projections).
  static ParamStore<T> build(const MainNetConfig& cfg, std::uint64_t seed) {
    ParamStore<T> ps2 = build2d(cfg, seed);
    return inflate_all(cfg, ps2);
  }

  static ParamStore<T> inflate_all(const MainNetConfig& cfg, const ParamStore<T>& ps2) {
    ParamStore<T> ps;
    for (const auto& [name, t] : ps2.params) {
      if (name.rfind("trunk.", 0) == 0) {
        const bool proj = name.find(".proj.") != std::string::npos;
        ps.add(name, inflate(t, proj ? 1 : cfg.temporal_kernel));
      } else {
        ps.add(name, t);
      }
    }
    return ps;
  }

  // Register every parameter on a tape. One registration shared by all
  // clips of a batch.
  static RefMap register_params(Tape<T>& tape, const ParamStore<T>& ps) {
    RefMap refs;
    for (const auto& [name, t] : ps.params) refs.emplace(name, tape.param(name, t));
    return refs;
  }

  struct Graph {
    std::map<std::string, Ref> taps;          // level -> HxWxC (time-averaged)
    std::vector<std::array<Ref, 3>> preds;    // per frame: normalized angle/speed/torque
    Ref h, c;                                 // final LSTM state
  };

  // 3D trunk + head over one clip. `prev` is the normalized previous
  // vehicle state (3-vector) used at frame 0; later frames feed back the
  // network's own predictions.
  Graph build_graph(Tape<T>& tape, const RefMap& pr, Ref clip, Ref prev, Ref h0,
                    Ref c0) const {
    const Shape& s = tape.val(clip).shape;
    if (s.size() != 4 || s[0] != cfg_.clip_len || s[1] != cfg_.input_h ||
        s[2] != cfg_.input_w || s[3] != 3)
      throw UsageError("mainnet forward: clip dims " + shape_str(s) + " do not match config");
    Graph g;
    Ref x = clip;
    if (cfg_.stem_pool > 1) x = tape.spatial_avg_pool(x, cfg_.stem_pool);
    x = tape.relu(tape.conv3d(x, pr.at("trunk.stem.w"), 2, 1));
    std::vector<Ref> stage_out;
    for (std::size_t st = 0; st < cfg_.block_widths.size(); ++st) {
      for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const std::string p = "trunk.s" + std::to_string(st) + ".b" + std::to_string(b);
        const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
        Ref y = tape.relu(tape.conv3d(x, pr.at(p + ".conv1.w"), stride, 1));
        y = tape.conv3d(y, pr.at(p + ".conv2.w"), 1, 1);
        Ref skip = pr.count(p + ".proj.w") ? tape.conv3d(x, pr.at(p + ".proj.w"), stride, 0) : x;
        x = tape.relu(tape.add(y, skip));
      }
      stage_out.push_back(x);
    }
    for (const auto& lvl : kLevels) g.taps[lvl] = tape.time_mean(stage_out[cfg_.tap_points.at(lvl)]);
    // per-frame head
    Ref gm = tape.global_spatial_mean(x);  // N x c_last
    Ref h = h0, c = c0;
    Ref prev3 = prev;
    for (std::size_t t = 0; t < cfg_.clip_len; ++t) {
      Ref fv = tape.relu(tape.dense(tape.row(gm, t), pr.at("fc.w"), pr.at("fc.b")));
      Ref in = tape.concat(fv, prev3);
      auto [h2, c2] = lstm_step(tape, pr, in, h, c);
      h = h2;
      c = c2;
      Ref a = tape.dense(h, pr.at("head.angle.w"), pr.at("head.angle.b"));
      Ref sp = tape.dense(h, pr.at("head.speed.w"), pr.at("head.speed.b"));
      Ref tq = tape.dense(h, pr.at("head.torque.w"), pr.at("head.torque.b"));
      g.preds.push_back({a, sp, tq});
      prev3 = tape.concat(tape.concat(a, sp), tq);
    }
    g.h = h;
    g.c = c;
    return g;
  }

  // Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate.
  static std::pair<Ref, Ref> lstm_step(Tape<T>& tape, const RefMap& pr, Ref x, Ref h, Ref c) {
    auto gate = [&](const char* n) {
      Ref zx = tape.dense(x, pr.at(std::string("lstm.wx") + n), pr.at(std::string("lstm.b") + n));
      Ref zb = tape.constant(Tensor<T>({tape.val(h).numel()}));
      Ref zh = tape.dense(h, pr.at(std::string("lstm.wh") + n), zb);
      return tape.add(zx, zh);
    };
    Ref i = tape.sigmoid(gate("i"));
    Ref f = tape.sigmoid(gate("f"));
    Ref gg = tape.tanh_(gate("g"));
    Ref o = tape.sigmoid(gate("o"));
    Ref c2 = tape.add(tape.mul(f, c), tape.mul(i, gg));
    Ref h2 = tape.mul(o, tape.tanh_(c2));
    return {h2, c2};
  }

  // Convenience inference pass on a private tape.
  NetOutput<T> forward(const ParamStore<T>& ps, const Tensor<T>& clip, const VehicleState& prev,
                       const LstmState<T>* state = nullptr) const {
    Tape<T> tape;
    RefMap pr = register_params(tape, ps);
    Ref clip_ref = tape.constant(clip);
    Tensor<T> prev_t({3});
    prev_t[0] = static_cast<T>(prev.angle);
    prev_t[1] = static_cast<T>(prev.speed);
    prev_t[2] = static_cast<T>(prev.torque);
    Ref prev_ref = tape.constant(prev_t);
    Tensor<T> h0({cfg_.lstm_hidden}), c0({cfg_.lstm_hidden});
    if (state) {
      h0 = state->h;
      c0 = state->c;
    }
    Graph g = build_graph(tape, pr, clip_ref, prev_ref, tape.constant(h0), tape.constant(c0));
    NetOutput<T> out;
    for (const auto& [lvl, ref] : g.taps) out.taps[lvl] = tape.val(ref);
    for (const auto& p : g.preds)
      out.per_frame.push_back({static_cast<double>(tape.scalar(p[0])),
                               static_cast<double>(tape.scalar(p[1])),
                               static_cast<double>(tape.scalar(p[2]))});
    out.prediction = {out.per_frame.back()[0], out.per_frame.back()[1], out.per_frame.back()[2]};
    out.lstm_state = {tape.val(g.h), tape.val(g.c)};
    return out;
  }

  // Inflated 3D trunk only, returning the full per-stage TxHxWxC outputs
  // (no time averaging), for inflation-equivalence checks. Accepts any
  // clip length.
  std::vector<Tensor<T>> forward3d_trunk(const ParamStore<T>& ps, const Tensor<T>& clip) const {
    if (clip.ndim() != 4 || clip.shape[3] != 3)
      throw UsageError("forward3d_trunk expects a TxHxWx3 clip");
    Tape<T> tape;
    RefMap pr;
    for (const auto& [name, t] : ps.params)
      if (name.rfind("trunk.", 0) == 0) pr.emplace(name, tape.param(name, t));
    Ref x = tape.constant(clip);
    if (cfg_.stem_pool > 1) x = tape.spatial_avg_pool(x, cfg_.stem_pool);
    x = tape.relu(tape.conv3d(x, pr.at("trunk.stem.w"), 2, 1));
    std::vector<Tensor<T>> outs;
    for (std::size_t st = 0; st < cfg_.block_widths.size(); ++st) {
      for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const std::string p = "trunk.s" + std::to_string(st) + ".b" + std::to_string(b);
        const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
        Ref y = tape.relu(tape.conv3d(x, pr.at(p + ".conv1.w"), stride, 1));
        y = tape.conv3d(y, pr.at(p + ".conv2.w"), 1, 1);
        Ref skip = pr.count(p + ".proj.w") ? tape.conv3d(x, pr.at(p + ".proj.w"), stride, 0) : x;
        x = tape.relu(tape.add(y, skip));
      }
      outs.push_back(tape.val(x));
    }
    return outs;
  }

  // 2D reference trunk on a single frame, used to verify inflation.
  // Returns the per-stage outputs (HxWxC).
  std::vector<Tensor<T>> forward2d_trunk(const ParamStore<T>& ps2, const Tensor<T>& frame) const {
    Tape<T> tape;
    RefMap pr;
    for (const auto& [name, t] : ps2.params)
      if (name.rfind("trunk.", 0) == 0) pr.emplace(name, tape.param(name, t));
    Ref x = tape.constant(frame);
    if (cfg_.stem_pool > 1) {
      // reuse the 4D pool via a length-1 time axis
      Tensor<T> f4({1, frame.shape[0], frame.shape[1], frame.shape[2]}, frame.data);
      Tape<T> tmp;
      auto pooled = tmp.val(tmp.spatial_avg_pool(tmp.constant(f4), cfg_.stem_pool));
      Tensor<T> f3({pooled.shape[1], pooled.shape[2], pooled.shape[3]}, pooled.data);
      x = tape.constant(f3);
    }
    x = tape.relu(tape.conv2d(x, pr.at("trunk.stem.w"), 2, 1));
    std::vector<Tensor<T>> outs;
    for (std::size_t st = 0; st < cfg_.block_widths.size(); ++st) {
      for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const std::string p = "trunk.s" + std::to_string(st) + ".b" + std::to_string(b);
        const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
        Ref y = tape.relu(tape.conv2d(x, pr.at(p + ".conv1.w"), stride, 1));
        y = tape.conv2d(y, pr.at(p + ".conv2.w"), 1, 1);
        Ref skip = pr.count(p + ".proj.w") ? tape.conv2d(x, pr.at(p + ".proj.w"), stride, 0) : x;
        x = tape.relu(tape.add(y, skip));
      }
      outs.push_back(tape.val(x));
    }
    return outs;
  }

  // Temporal margin after which a frame's receptive field is interior:
  // one temporal half-kernel per inflated conv on the deepest path.
  std::size_t temporal_margin() const {
    const std::size_t half = (cfg_.temporal_kernel - 1) / 2;
    const std::size_t convs = 1 + cfg_.block_widths.size() * cfg_.depth * 2;
    return half * convs;
  }

 private:
  MainNetConfig cfg_;
};

// Inflation-equivalence probe: with a temporally constant clip, interior
// frames of the inflated 3D trunk must reproduce the 2D trunk. Returns the
// max abs deviation over all stages and interior frames.
template <class T>
double inflation_max_err(const MainNetConfig& cfg, const ParamStore<T>& ps2,
                         std::uint64_t frame_seed) {
  MainNet<T> net(cfg);
  const std::size_t t_len = 2 * net.temporal_margin() + 3;
  std::mt19937_64 rng(frame_seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor<T> frame({cfg.input_h, cfg.input_w, 3});
  for (T& v : frame.data) v = static_cast<T>(d(rng));
  Tensor<T> clip({t_len, cfg.input_h, cfg.input_w, 3});
  for (std::size_t t = 0; t < t_len; ++t)
    std::copy(frame.data.begin(), frame.data.end(), clip.data.begin() + t * frame.numel());
  const auto ref2d = net.forward2d_trunk(ps2, frame);
  const auto out3d = net.forward3d_trunk(MainNet<T>::inflate_all(cfg, ps2), clip);
  const std::size_t half = (cfg.temporal_kernel - 1) / 2;
  double max_err = 0;
  for (std::size_t s = 0; s < ref2d.size(); ++s) {
    const std::size_t margin = half * (1 + (s + 1) * cfg.depth * 2);
    const std::size_t n = ref2d[s].numel();
    for (std::size_t t = margin; t + margin < t_len; ++t)
      for (std::size_t i = 0; i < n; ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(out3d[s][t * n + i]) -
                                             static_cast<double>(ref2d[s][i])));
  }
  return max_err;
}

}  // namespace fmnet
