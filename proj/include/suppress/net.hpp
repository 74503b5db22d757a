#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suppress/core.hpp"
#include "suppress/rng.hpp"
#include "suppress/weighting.hpp"

namespace suppress {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Layer stack description: each conv layer is a bank of 3x3 valid
/// convolutions followed by ReLU and a 2x2 stride-2 max-pool (floor), then
/// one ReLU dense layer and a single sigmoid output unit.
struct Architecture {
  int input_h = kPatchSize;
  int input_w = kPatchSize;
  int input_c = 3;
  std::vector<int> conv_channels = {32, 32, 64};
  int hidden_units = 64;

  bool operator==(const Architecture&) const = default;
};

struct StageShape {
  int h = 0, w = 0, c = 0;
  bool operator==(const StageShape&) const = default;
};

struct ShapeTrace {
  std::vector<StageShape> conv_out;  // after each conv, before pooling
  std::vector<StageShape> pool_out;  // after each max-pool
  int flatten = 0;
};

/// Derives all intermediate shapes; throws on architectures whose feature
/// maps collapse below 1x1.
ShapeTrace trace_shapes(const Architecture& arch);

template <typename S>
struct ConvLayer {
  int in_c = 0, out_c = 0;
  std::vector<S> w;  // [out_c][ky][kx][in_c]
  std::vector<S> b;  // [out_c]
};

template <typename S>
struct DenseLayer {
  int in_n = 0, out_n = 0;
  std::vector<S> w;  // [out_n][in_n]
  std::vector<S> b;  // [out_n]
};

/// Binary cross-entropy with the prediction clamped to [1e-7, 1 - 1e-7]
/// before the logs.
double bce_loss(double yhat, int label);

namespace detail {

template <typename S>
void conv3x3_forward(const S* in, int h, int w, int c,
                     const ConvLayer<S>& layer, S* out) {
  const int oh = h - 2, ow = w - 2, oc_n = layer.out_c;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      S* out_px = out + (static_cast<std::size_t>(y) * ow + x) * oc_n;
      for (int oc = 0; oc < oc_n; ++oc) {
        S acc = layer.b[oc];
        const S* wbase =
            layer.w.data() + static_cast<std::size_t>(oc) * 9 * c;
        for (int ky = 0; ky < 3; ++ky) {
          const S* in_row =
              in + (static_cast<std::size_t>(y + ky) * w + x) * c;
          const S* w_row = wbase + static_cast<std::size_t>(ky) * 3 * c;
          for (int kx = 0; kx < 3; ++kx) {
            const S* ip = in_row + static_cast<std::size_t>(kx) * c;
            const S* wp = w_row + static_cast<std::size_t>(kx) * c;
            for (int ic = 0; ic < c; ++ic) acc += ip[ic] * wp[ic];
          }
        }
        out_px[oc] = acc;
      }
    }
  }
}

// Pools ReLU(z) over 2x2 windows, stride 2, floor semantics. Ties keep the
// first window element in row-major order.
template <typename S>
void relu_maxpool(const S* z, int /*h*/, int w, int c, S* out, int* argmax,
                  int oh, int ow) {
  for (int py = 0; py < oh; ++py) {
    for (int px = 0; px < ow; ++px) {
      for (int ch = 0; ch < c; ++ch) {
        S best = S(-1);
        int best_idx = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (static_cast<std::size_t>(2 * py + dy) * w + (2 * px + dx)) *
                    c +
                ch;
            const S v = z[idx] > S(0) ? z[idx] : S(0);
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<int>(idx);
            }
          }
        }
        const std::size_t o =
            (static_cast<std::size_t>(py) * ow + px) * c + ch;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
}

}  // namespace detail

/// The feature-suppression classifier. Scalar type is a template parameter:
/// float for the production model (all parameters are 32-bit), double for
/// finite-difference testing of the backward pass.
template <typename S>
struct ConvNet {
  Architecture architecture;
  ShapeTrace shape_trace;
  std::vector<ConvLayer<S>> conv;
  DenseLayer<S> dense1;
  DenseLayer<S> dense2;

  explicit ConvNet(const Architecture& arch)
      : architecture(arch), shape_trace(trace_shapes(arch)) {
    int in_c = arch.input_c;
    for (int out_c : arch.conv_channels) {
      ConvLayer<S> layer;
      layer.in_c = in_c;
      layer.out_c = out_c;
      layer.w.assign(static_cast<std::size_t>(out_c) * 9 * in_c, S(0));
      layer.b.assign(out_c, S(0));
      conv.push_back(std::move(layer));
      in_c = out_c;
    }
    dense1.in_n = shape_trace.flatten;
    dense1.out_n = arch.hidden_units;
    dense1.w.assign(
        static_cast<std::size_t>(dense1.out_n) * dense1.in_n, S(0));
    dense1.b.assign(dense1.out_n, S(0));
    dense2.in_n = arch.hidden_units;
    dense2.out_n = 1;
    dense2.w.assign(dense2.in_n, S(0));
    dense2.b.assign(1, S(0));
  }

  static ConvNet he_init(const Architecture& arch, std::uint64_t seed) {
    ConvNet net(arch);
    Rng rng(seed);
    for (ConvLayer<S>& layer : net.conv) {
      const double stddev = std::sqrt(2.0 / (9.0 * layer.in_c));
      for (S& v : layer.w) v = static_cast<S>(rng.normal(0.0, stddev));
    }
    const double std1 = std::sqrt(2.0 / net.dense1.in_n);
    for (S& v : net.dense1.w) v = static_cast<S>(rng.normal(0.0, std1));
    const double std2 = std::sqrt(2.0 / net.dense2.in_n);
    for (S& v : net.dense2.w) v = static_cast<S>(rng.normal(0.0, std2));
    return net;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const ConvLayer<S>& layer : conv)
      n += layer.w.size() + layer.b.size();
    n += dense1.w.size() + dense1.b.size();
    n += dense2.w.size() + dense2.b.size();
    return n;
  }

  struct ParamView {
    std::string name;
    std::span<S> data;
    bool is_bias;
  };
  struct ConstParamView {
    std::string name;
    std::span<const S> data;
    bool is_bias;
  };

  std::vector<ParamView> params() {
    std::vector<ParamView> out;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const std::string base = "conv" + std::to_string(i + 1);
      out.push_back({base + "_weight", conv[i].w, false});
      out.push_back({base + "_bias", conv[i].b, true});
    }
    out.push_back({"dense1_weight", dense1.w, false});
    out.push_back({"dense1_bias", dense1.b, true});
    out.push_back({"dense2_weight", dense2.w, false});
    out.push_back({"dense2_bias", dense2.b, true});
    return out;
  }
  std::vector<ConstParamView> params() const {
    std::vector<ConstParamView> out;
    for (const ParamView& p : const_cast<ConvNet*>(this)->params())
      out.push_back({p.name, p.data, p.is_bias});
    return out;
  }

  void zero() {
    for (ParamView& p : params())
      for (S& v : p.data) v = S(0);
  }

  struct Trace {
    std::vector<std::vector<S>> conv_z;    // pre-ReLU conv outputs
    std::vector<std::vector<S>> pool_out;  // post ReLU + pool
    std::vector<std::vector<int>> pool_argmax;
    std::vector<S> hidden_z;
    std::vector<S> hidden_a;
    S logit = S(0);
    S yhat = S(0);
  };

  std::size_t input_size() const {
    return static_cast<std::size_t>(architecture.input_h) *
           architecture.input_w * architecture.input_c;
  }

  // Input layout: (y, x, channel) row-major, values expected in [0, 1].
  S forward(std::span<const S> input, Trace* trace = nullptr) const {
    if (input.size() != input_size())
      throw ShapeMismatch("forward: input has " +
                          std::to_string(input.size()) + " values, expected " +
                          std::to_string(input_size()));
    Trace local;
    Trace& t = trace ? *trace : local;
    t.conv_z.resize(conv.size());
    t.pool_out.resize(conv.size());
    t.pool_argmax.resize(conv.size());

    const S* x = input.data();
    int h = architecture.input_h, w = architecture.input_w,
        c = architecture.input_c;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const StageShape& cs = shape_trace.conv_out[i];
      const StageShape& ps = shape_trace.pool_out[i];
      t.conv_z[i].resize(static_cast<std::size_t>(cs.h) * cs.w * cs.c);
      detail::conv3x3_forward(x, h, w, c, conv[i], t.conv_z[i].data());
      t.pool_out[i].resize(static_cast<std::size_t>(ps.h) * ps.w * ps.c);
      t.pool_argmax[i].resize(t.pool_out[i].size());
      detail::relu_maxpool(t.conv_z[i].data(), cs.h, cs.w, cs.c,
                           t.pool_out[i].data(), t.pool_argmax[i].data(),
                           ps.h, ps.w);
      x = t.pool_out[i].data();
      h = ps.h;
      w = ps.w;
      c = ps.c;
    }

    const std::vector<S>& flat = t.pool_out.back();
    t.hidden_z.resize(dense1.out_n);
    t.hidden_a.resize(dense1.out_n);
    for (int j = 0; j < dense1.out_n; ++j) {
      S acc = dense1.b[j];
      const S* wp = dense1.w.data() + static_cast<std::size_t>(j) * dense1.in_n;
      for (int k = 0; k < dense1.in_n; ++k) acc += wp[k] * flat[k];
      t.hidden_z[j] = acc;
      t.hidden_a[j] = acc > S(0) ? acc : S(0);
    }

    S logit = dense2.b[0];
    for (int k = 0; k < dense2.in_n; ++k)
      logit += dense2.w[k] * t.hidden_a[k];
    t.logit = logit;
    // numerically stable sigmoid
    if (logit >= S(0)) {
      const S e = std::exp(-logit);
      t.yhat = S(1) / (S(1) + e);
    } else {
      const S e = std::exp(logit);
      t.yhat = e / (S(1) + e);
    }
    return t.yhat;
  }

  /// Analytic gradients of the cross-entropy loss with respect to every
  /// parameter, returned in a net-shaped holder. Max-pool routes gradient to
  /// the argmax element recorded in the forward pass.
  ConvNet backward(std::span<const S> input, int label,
                   double* loss_out = nullptr) const {
    Trace t;
    const S yhat = forward(input, &t);
    if (loss_out) *loss_out = bce_loss(static_cast<double>(yhat), label);

    ConvNet grads(architecture);
    const S dlogit = yhat - static_cast<S>(label);

    // dense2
    grads.dense2.b[0] = dlogit;
    std::vector<S> dhidden(dense2.in_n);
    for (int k = 0; k < dense2.in_n; ++k) {
      grads.dense2.w[k] = dlogit * t.hidden_a[k];
      dhidden[k] = dlogit * dense2.w[k];
    }

    // dense1 (ReLU)
    const std::vector<S>& flat = t.pool_out.back();
    std::vector<S> dflat(dense1.in_n, S(0));
    for (int j = 0; j < dense1.out_n; ++j) {
      if (t.hidden_z[j] <= S(0)) continue;
      const S g = dhidden[j];
      grads.dense1.b[j] = g;
      S* dwp =
          grads.dense1.w.data() + static_cast<std::size_t>(j) * dense1.in_n;
      const S* wp = dense1.w.data() + static_cast<std::size_t>(j) * dense1.in_n;
      for (int k = 0; k < dense1.in_n; ++k) {
        dwp[k] = g * flat[k];
        dflat[k] += g * wp[k];
      }
    }

    // conv stack, last to first
    std::vector<S> dpool = std::move(dflat);
    for (int i = static_cast<int>(conv.size()) - 1; i >= 0; --i) {
      const StageShape& cs = shape_trace.conv_out[i];
      // unpool to conv grid, then ReLU gate
      std::vector<S> dz(static_cast<std::size_t>(cs.h) * cs.w * cs.c, S(0));
      for (std::size_t o = 0; o < dpool.size(); ++o)
        dz[t.pool_argmax[i][o]] += dpool[o];
      for (std::size_t o = 0; o < dz.size(); ++o)
        if (t.conv_z[i][o] <= S(0)) dz[o] = S(0);

      const S* in_act;
      int h, w, c;
      if (i == 0) {
        in_act = input.data();
        h = architecture.input_h;
        w = architecture.input_w;
        c = architecture.input_c;
      } else {
        in_act = t.pool_out[i - 1].data();
        h = shape_trace.pool_out[i - 1].h;
        w = shape_trace.pool_out[i - 1].w;
        c = shape_trace.pool_out[i - 1].c;
      }

      std::vector<S> din;
      if (i > 0) din.assign(static_cast<std::size_t>(h) * w * c, S(0));
      ConvLayer<S>& g = grads.conv[i];
      const ConvLayer<S>& layer = conv[i];
      for (int y = 0; y < cs.h; ++y) {
        for (int x = 0; x < cs.w; ++x) {
          const S* dz_px =
              dz.data() + (static_cast<std::size_t>(y) * cs.w + x) * cs.c;
          for (int oc = 0; oc < cs.c; ++oc) {
            const S gz = dz_px[oc];
            if (gz == S(0)) continue;
            g.b[oc] += gz;
            const S* wbase =
                layer.w.data() + static_cast<std::size_t>(oc) * 9 * c;
            S* dwbase = g.w.data() + static_cast<std::size_t>(oc) * 9 * c;
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const std::size_t in_off =
                    (static_cast<std::size_t>(y + ky) * w + (x + kx)) * c;
                const S* ip = in_act + in_off;
                const S* wp = wbase + (static_cast<std::size_t>(ky) * 3 + kx) * c;
                S* dwp = dwbase + (static_cast<std::size_t>(ky) * 3 + kx) * c;
                for (int ic = 0; ic < c; ++ic) dwp[ic] += gz * ip[ic];
                if (i > 0) {
                  S* dip = din.data() + in_off;
                  for (int ic = 0; ic < c; ++ic) dip[ic] += gz * wp[ic];
                }
              }
            }
          }
        }
      }
      dpool = std::move(din);
    }
    return grads;
  }
};

/// Flattens a weighted patch into network input, channels scaled to [0, 1].
std::vector<float> patch_input(const WeightedPatch& patch);

Architecture suppressor_architecture();

inline constexpr std::size_t kSuppressorParamCount = 45153;

/// He-initialized model with the fixed production architecture; verifies the
/// 45,153-parameter census at construction.
ConvNet<float> make_suppressor_model(std::uint64_t seed);

struct TrainConfig {
  double momentum = 0.9;
  double learning_rate = 0.001;
  double weight_decay = 0.0005;
  int epochs = 1;
  std::uint64_t seed = 0;
  int batch_size = 1;
};

struct TrainingExample {
  WeightedPatch input;
  int label = 0;  // 1 = fruit, 0 = background
};

struct TrainResult {
  ConvNet<float> model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// SGD with classical momentum and L2 weight decay on weights (not biases);
/// He init and per-epoch shuffling both derive from cfg.seed, so identical
/// configs give bit-identical models.
TrainResult train(std::span<const TrainingExample> examples,
                  const TrainConfig& cfg);

struct ScoredDetection {
  Detection detection;
  double suppressor_score = 0.0;
};

/// crop -> resize 36x36 -> weight -> forward for each detection; order
/// preserved, independent of the thread count.
std::vector<ScoredDetection> score(const ConvNet<float>& model,
                                   std::span<const Detection> detections,
                                   const std::map<std::string, Image>& images,
                                   const WeightingConfig& wcfg,
                                   int threads = 1);

WeightedPatch detection_patch(const Image& img, const BBox& box,
                              const WeightingConfig& wcfg,
                              std::uint64_t stream);

struct Dataset;  // from ingest

/// Label is 1 when the detection box overlaps some same-image annotation at
/// IoU >= label_iou.
std::vector<TrainingExample> make_training_examples(
    const Dataset& ds, const std::map<std::string, Image>& images,
    const WeightingConfig& wcfg, double label_iou = 0.5, int threads = 1);

void save_model(const ConvNet<float>& model, const std::filesystem::path& path);
ConvNet<float> load_model(const std::filesystem::path& path);
std::string model_to_json(const ConvNet<float>& model);
ConvNet<float> model_from_json(const std::string& text);

}  // namespace suppress
