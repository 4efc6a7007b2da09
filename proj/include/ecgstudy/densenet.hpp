#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgstudy/labels.hpp"
#include "ecgstudy/preprocess.hpp"
#include "ecgstudy/scalogram.hpp"

namespace ecgstudy {

/// DenseNet-style classifier over scalogram images.
///
/// stem:        3x3 conv (stride `stem_stride`) -> `stem_pool` x `stem_pool` average pool
/// dense block: `layers_per_block` x [BN -> ReLU -> 3x3 conv (growth_rate)], each output
///              concatenated onto the block's running feature map
/// transition:  BN -> ReLU -> 1x1 conv (channels * compression) -> 2x2 average pool
/// head:        BN -> ReLU -> global average pool -> affine -> softmax
struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 256;
  std::size_t channels = 1;
  std::size_t n_blocks = 3;
  std::size_t layers_per_block = 4;
  std::size_t growth_rate = 12;
  std::size_t initial_channels = 16;
  double compression = 0.5;
  std::size_t n_classes = kNumRhythms;
  std::size_t stem_stride = 2;
  std::size_t stem_pool = 2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

/// One block, two layers, 8x16 input: small enough for exhaustive gradient checks.
ModelConfig reduced_config();

/// Channel count after the stem, after every dense layer, and after each transition.
struct ChannelPlan {
  std::size_t stem = 0;
  std::vector<std::vector<std::size_t>> block_layer_inputs;  // per block, per layer
  std::vector<std::size_t> block_outputs;
  std::vector<std::size_t> transition_outputs;
  std::vector<std::array<std::size_t, 2>> block_spatial;  // (h, w) per block
};

ChannelPlan plan_channels(const ModelConfig& config);

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

struct ParamLayout {
  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  const TensorSlot& at(std::string_view name) const;
  const TensorSlot* find(std::string_view name) const;
  bool operator==(const ParamLayout& other) const;
};

struct Params {
  ModelConfig config;
  ParamLayout layout;         // trainable tensors; gradients share this layout
  std::vector<double> values;
  ParamLayout stats_layout;   // normalization running statistics (not trainable)
  std::vector<double> running_stats;
  std::string model_version = "densenet-desk-1";

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
  std::span<double> stats(std::string_view name);
  std::span<const double> stats(std::string_view name) const;
};

ParamLayout build_layout(const ModelConfig& config);
ParamLayout build_stats_layout(const ModelConfig& config);

Params init_params(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

struct Prediction {
  std::array<double, kNumRhythms> probabilities{};
  Rhythm predicted_class = Rhythm::nsr;
  std::string model_version;
};

std::vector<Prediction> forward(const Params& params, std::span<const ModelImage> images,
                                Mode mode);

/// Mean of -log(max(p[label], 1e-12)) over the batch.
double cross_entropy(std::span<const Prediction> predictions, std::span<const std::size_t> labels);

struct GradResult {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as Params::values
  std::vector<Prediction> predictions;
  std::vector<double> batch_means;      // stats layout, running_mean slots only meaningful
  std::vector<double> batch_variances;  // stats layout, running_var slots only meaningful
};

/// Exact reverse-mode gradient of cross_entropy(forward(params, images, train), labels).
GradResult grad(const Params& params, std::span<const ModelImage> images,
                std::span<const std::size_t> labels);

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  Params params;
  std::vector<EpochStats> history;
};

struct LabeledImage {
  ModelImage image;
  std::size_t label = 0;
};

using EpochCallback = std::function<void(const EpochStats&, const Params&)>;

TrainResult train(Params params, std::span<const LabeledImage> dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Default scale grid for the model input (0.5-40 Hz, 64 scales, omega0 = 6).
const ScaleGrid& default_scale_grid();

/// resample -> normalize -> cwt -> to_model_input, for a segment at any rate.
ModelImage segment_to_image(const Segment& segment);

Prediction predict_pipeline(const Params& params, const Segment& segment);

// Checkpoint: magic, format version, config block, layout table, little-endian
// float64 payloads, CRC-32 of everything before it.
std::vector<std::uint8_t> serialize_params(const Params& params);
Params deserialize_params(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Params& params, const std::filesystem::path& path);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace ecgstudy
