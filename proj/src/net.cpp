#include "suppress/net.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "suppress/ingest.hpp"
#include "suppress/log.hpp"
#include "suppress/parallel.hpp"

namespace suppress {

using nlohmann::json;

ShapeTrace trace_shapes(const Architecture& arch) {
  if (arch.input_h < 1 || arch.input_w < 1 || arch.input_c < 1)
    throw std::invalid_argument("architecture: input dimensions must be >= 1");
  if (arch.conv_channels.empty())
    throw std::invalid_argument("architecture: need at least one conv layer");
  if (arch.hidden_units < 1)
    throw std::invalid_argument("architecture: hidden_units must be >= 1");
  ShapeTrace t;
  int h = arch.input_h, w = arch.input_w;
  for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
    const int c = arch.conv_channels[i];
    if (c < 1)
      throw std::invalid_argument("architecture: conv channels must be >= 1");
    h -= 2;
    w -= 2;
    if (h < 1 || w < 1)
      throw std::invalid_argument(
          "architecture: feature map collapses at conv layer " +
          std::to_string(i + 1));
    t.conv_out.push_back({h, w, c});
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1)
      throw std::invalid_argument(
          "architecture: feature map collapses at pool layer " +
          std::to_string(i + 1));
    t.pool_out.push_back({h, w, c});
  }
  t.flatten = h * w * arch.conv_channels.back();
  return t;
}

double bce_loss(double yhat, int label) {
  constexpr double kEps = 1e-7;
  const double p = std::clamp(yhat, kEps, 1.0 - kEps);
  return label ? -std::log(p) : -std::log(1.0 - p);
}

std::vector<float> patch_input(const WeightedPatch& patch) {
  const Image& img = patch.masked;
  std::vector<float> out(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return out;
}

Architecture suppressor_architecture() { return Architecture{}; }

ConvNet<float> make_suppressor_model(std::uint64_t seed) {
  ConvNet<float> net = ConvNet<float>::he_init(suppressor_architecture(), seed);
  if (net.parameter_count() != kSuppressorParamCount)
    throw std::logic_error("suppressor model has " +
                           std::to_string(net.parameter_count()) +
                           " parameters, expected " +
                           std::to_string(kSuppressorParamCount));
  return net;
}

TrainResult train(std::span<const TrainingExample> examples,
                  const TrainConfig& cfg) {
  if (examples.empty()) throw EmptyDataset("train: no examples");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.learning_rate < 0.0 || cfg.momentum < 0.0 || cfg.weight_decay < 0.0)
    throw std::invalid_argument("train: hyperparameters must be >= 0");

  bool has_pos = false, has_neg = false;
  for (const TrainingExample& ex : examples)
    (ex.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    log_warn("train: all " + std::to_string(examples.size()) +
             " examples share one label; the model will saturate");

  std::vector<std::vector<float>> inputs;
  inputs.reserve(examples.size());
  for (const TrainingExample& ex : examples)
    inputs.push_back(patch_input(ex.input));

  TrainResult out{make_suppressor_model(cfg.seed), {}};
  ConvNet<float> velocity(out.model.architecture);
  ConvNet<float> gsum(out.model.architecture);
  Rng shuffle_rng(cfg.seed, 1);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const float lr = static_cast<float>(cfg.learning_rate);
  const float mu = static_cast<float>(cfg.momentum);
  const float wd = static_cast<float>(cfg.weight_decay);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t m = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batch_size), order.size() - done);
      gsum.zero();
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t idx = order[done + j];
        double loss = 0.0;
        ConvNet<float> g =
            out.model.backward(inputs[idx], examples[idx].label, &loss);
        loss_sum += loss;
        auto dst = gsum.params();
        auto src = g.params();
        for (std::size_t p = 0; p < dst.size(); ++p)
          for (std::size_t k = 0; k < dst[p].data.size(); ++k)
            dst[p].data[k] += src[p].data[k];
      }
      done += m;

      const float inv_m = 1.0f / static_cast<float>(m);
      auto mp = out.model.params();
      auto vp = velocity.params();
      auto gp = gsum.params();
      for (std::size_t p = 0; p < mp.size(); ++p) {
        const bool bias = mp[p].is_bias;
        for (std::size_t k = 0; k < mp[p].data.size(); ++k) {
          float g = gp[p].data[k] * inv_m;
          if (!bias) g += wd * mp[p].data[k];  // decay skips biases
          float& v = vp[p].data[k];
          v = mu * v - lr * g;
          mp[p].data[k] += v;
        }
      }
    }
    out.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return out;
}

WeightedPatch detection_patch(const Image& img, const BBox& box,
                              const WeightingConfig& wcfg,
                              std::uint64_t stream) {
  const Image cropped = crop(img, box);
  const Image small = resize_bilinear(cropped, kPatchSize, kPatchSize);
  return weight_patch(small, wcfg, stream);
}

std::vector<ScoredDetection> score(const ConvNet<float>& model,
                                   std::span<const Detection> detections,
                                   const std::map<std::string, Image>& images,
                                   const WeightingConfig& wcfg, int threads) {
  for (const Detection& d : detections)
    if (!images.count(d.image_id))
      throw UnknownImageId("score: no image loaded for id '" + d.image_id +
                           "'");
  std::vector<ScoredDetection> out(detections.size());
  parallel_for(detections.size(), threads, [&](std::size_t i) {
    const Detection& d = detections[i];
    const WeightedPatch patch =
        detection_patch(images.at(d.image_id), d.box, wcfg, i);
    const std::vector<float> in = patch_input(patch);
    out[i] = {d, static_cast<double>(model.forward(in))};
  });
  return out;
}

std::vector<TrainingExample> make_training_examples(
    const Dataset& ds, const std::map<std::string, Image>& images,
    const WeightingConfig& wcfg, double label_iou, int threads) {
  for (const Detection& d : ds.detections)
    if (!images.count(d.image_id))
      throw UnknownImageId("make_training_examples: no image loaded for id '" +
                           d.image_id + "'");
  std::map<std::string, std::vector<const BBox*>> by_image;
  for (const Annotation& a : ds.annotations)
    by_image[a.image_id].push_back(&a.box);

  std::vector<TrainingExample> out(ds.detections.size());
  parallel_for(ds.detections.size(), threads, [&](std::size_t i) {
    const Detection& d = ds.detections[i];
    out[i].input = detection_patch(images.at(d.image_id), d.box, wcfg, i);
    double best = 0.0;
    if (auto it = by_image.find(d.image_id); it != by_image.end())
      for (const BBox* b : it->second) best = std::max(best, iou(d.box, *b));
    out[i].label = best >= label_iou ? 1 : 0;
  });
  return out;
}

namespace {

json tensor_to_json(const float* data, std::span<const int> dims) {
  json out = json::array();
  if (dims.size() == 1) {
    for (int i = 0; i < dims[0]; ++i) out.push_back(data[i]);
    return out;
  }
  std::size_t stride = 1;
  for (std::size_t d = 1; d < dims.size(); ++d)
    stride *= static_cast<std::size_t>(dims[d]);
  for (int i = 0; i < dims[0]; ++i)
    out.push_back(tensor_to_json(data + i * stride, dims.subspan(1)));
  return out;
}

void tensor_from_json(const json& j, std::span<const int> dims,
                      const std::string& name, std::vector<float>& out) {
  if (dims.empty()) {
    if (!j.is_number())
      throw ParseError("model: tensor '" + name + "' holds a non-number");
    out.push_back(j.get<float>());
    return;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != dims[0])
    throw ShapeMismatch("model: tensor '" + name + "' has extent " +
                        std::to_string(j.is_array() ? j.size() : 0) +
                        " where the architecture requires " +
                        std::to_string(dims[0]));
  for (const json& e : j) tensor_from_json(e, dims.subspan(1), name, out);
}

struct TensorSpec {
  std::string name;
  std::vector<int> dims;
  const std::vector<float>* src;
  std::vector<float>* dst;
};

std::vector<TensorSpec> tensor_specs(ConvNet<float>& net) {
  std::vector<TensorSpec> specs;
  for (std::size_t i = 0; i < net.conv.size(); ++i) {
    ConvLayer<float>& l = net.conv[i];
    const std::string base = "conv" + std::to_string(i + 1);
    specs.push_back({base + "_weight", {l.out_c, 3, 3, l.in_c}, &l.w, &l.w});
    specs.push_back({base + "_bias", {l.out_c}, &l.b, &l.b});
  }
  specs.push_back({"dense1_weight",
                   {net.dense1.out_n, net.dense1.in_n},
                   &net.dense1.w,
                   &net.dense1.w});
  specs.push_back({"dense1_bias", {net.dense1.out_n}, &net.dense1.b,
                   &net.dense1.b});
  specs.push_back({"dense2_weight",
                   {net.dense2.out_n, net.dense2.in_n},
                   &net.dense2.w,
                   &net.dense2.w});
  specs.push_back({"dense2_bias", {net.dense2.out_n}, &net.dense2.b,
                   &net.dense2.b});
  return specs;
}

}  // namespace

std::string model_to_json(const ConvNet<float>& model) {
  json j;
  j["format_version"] = 1;
  j["architecture"] = {{"input_height", model.architecture.input_h},
                       {"input_width", model.architecture.input_w},
                       {"input_channels", model.architecture.input_c},
                       {"conv_channels", model.architecture.conv_channels},
                       {"hidden_units", model.architecture.hidden_units}};
  json params = json::object();
  for (const TensorSpec& spec :
       tensor_specs(const_cast<ConvNet<float>&>(model)))
    params[spec.name] = tensor_to_json(spec.src->data(), spec.dims);
  j["parameters"] = std::move(params);
  return j.dump();
}

ConvNet<float> model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") ||
      !j["format_version"].is_number_integer())
    throw ParseError("model: missing integer format_version");
  const int version = j["format_version"].get<int>();
  if (version != 1)
    throw VersionMismatch("model: file has format_version " +
                          std::to_string(version) +
                          "; this build reads version 1");
  if (!j.contains("architecture") || !j["architecture"].is_object())
    throw ParseError("model: missing architecture object");
  const json& a = j["architecture"];
  Architecture arch;
  try {
    arch.input_h = a.at("input_height").get<int>();
    arch.input_w = a.at("input_width").get<int>();
    arch.input_c = a.at("input_channels").get<int>();
    arch.conv_channels = a.at("conv_channels").get<std::vector<int>>();
    arch.hidden_units = a.at("hidden_units").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: bad architecture field: ") + e.what());
  }
  ConvNet<float> net(arch);
  if (!j.contains("parameters") || !j["parameters"].is_object())
    throw ParseError("model: missing parameters object");
  const json& params = j["parameters"];
  for (const TensorSpec& spec : tensor_specs(net)) {
    if (!params.contains(spec.name))
      throw ParseError("model: parameters lack tensor '" + spec.name + "'");
    std::vector<float> values;
    values.reserve(spec.dst->size());
    tensor_from_json(params[spec.name], spec.dims, spec.name, values);
    *spec.dst = std::move(values);
  }
  return net;
}

void save_model(const ConvNet<float>& model,
                const std::filesystem::path& path) {
  write_file(path, model_to_json(model));
}

ConvNet<float> load_model(const std::filesystem::path& path) {
  return model_from_json(read_file(path));
}

}  // namespace suppress
