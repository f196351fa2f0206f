#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "immcognito/graph.hpp"
#include "immcognito/tensor.hpp"
#include "immcognito/types.hpp"

namespace immcognito {

// What the decoder sees besides the raw input coordinates.
enum class DecoderInput {
  kGlobal,          // p_i + H_max
  kGlobalAndLocal,  // p_i + H_max + h'_i
  kLocal,           // p_i + h'_i, no pooling (ablation)
};

DecoderInput parse_decoder_input(std::string_view name);
std::string_view to_string(DecoderInput input);

struct ModelConfig {
  int hidden = 64;      // node feature width d_h
  int message = 64;     // message width d_m
  int key_dim = 16;     // per-head query/key width d_k
  int value_dim = 16;   // per-head value width d_v
  int heads = 4;        // B
  int output_dim = 64;  // width of z after W^O, d_z
  int k = 2;            // Temporal Graph KNN neighbors
  GraphMode graph_mode = GraphMode::kTemporal;
  DecoderInput decoder_input = DecoderInput::kGlobal;
  std::uint64_t seed = 7;

  void validate() const;
};

// Affine layer y = x W + b, with W (in x out) and b (1 x out).
struct Dense {
  Mat weight;
  Mat bias;
};

// Every learnable tensor of the autoencoder or of the classifier variant.
// Per-head projections are stored side by side: columns
// [b*d_k, (b+1)*d_k) of `query`/`key` and [b*d_v, (b+1)*d_v) of `value`
// belong to head b.
struct ModelParams {
  Dense encoder0, encoder1;  // 3 -> d_h -> d_h, ReLU
  Dense message0, message1;  // 2 d_h -> d_m -> d_m, ReLU
  Mat query;                 // d_h x B d_k
  Mat key;                   // d_m x B d_k
  Mat value;                 // d_m x B d_v
  Mat output;                // B d_v x d_z
  Dense update;              // d_h + d_z -> d_h, ReLU
  Dense decoder0, decoder1;  // decoder input -> d_h (ReLU) -> 3 (linear)
  Dense head;                // d_h -> classes (classifier variant)
  bool has_decoder = false;
  bool has_head = false;

  int num_classes() const { return has_head ? static_cast<int>(head.weight.cols()) : 0; }
};

// Canonical tensor order; names are stable and used by the parameter file.
std::vector<std::pair<std::string, Mat*>> named_tensors(ModelParams& params);
std::vector<std::pair<std::string, const Mat*>> named_tensors(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

ModelParams init_autoencoder(const ModelConfig& config);
ModelParams init_classifier(const ModelConfig& config, int num_classes);
ModelParams zeros_like(const ModelParams& params);
// Throws ConfigError when tensor shapes disagree with `config`.
void check_shapes(const ModelParams& params, const ModelConfig& config);
// Rounds every tensor to the nearest float32 value.
void round_to_float(ModelParams& params);
// FNV-1a over the raw bytes of every tensor, in canonical order.
std::uint64_t checksum(const ModelParams& params);

// --- forward building blocks -------------------------------------------

Mat encode_nodes(const Mat& coords, const ModelParams& params);
// One message per edge, in edge order: M(h_i ++ (h_j - h_i)) for j -> i.
Mat generate_messages(const TemporalGraph& graph, const Mat& h, const ModelParams& params);

struct AttentionResult {
  Mat z;      // N x d_z
  Mat alpha;  // E x B, softmax weights over each node's incoming edges
};
// Queries come from node features, keys and values from edge messages.
// Nodes without incoming edges get z = 0.
AttentionResult aggregate_attention(const TemporalGraph& graph, const Mat& h, const Mat& messages,
                                    const ModelParams& params, const ModelConfig& config);

Mat update_nodes(const Mat& h, const Mat& z, const ModelParams& params);

struct PoolResult {
  RowVec values;
  std::vector<int> argmax;  // lowest row index on ties
};
PoolResult global_max_pool(const Mat& h);

// `local` (N x d_h) is required unless the decoder input is kGlobal.
Mat decode(const Mat& coords, const RowVec& pooled, const ModelParams& params, const ModelConfig& config,
           const Mat* local = nullptr);

// --- cached passes for training -----------------------------------------

struct DenseCache {
  Mat input;
  Mat pre;
};

struct BackboneCache {
  TemporalGraph graph;
  DenseCache enc0, enc1;
  Mat h;
  DenseCache msg0, msg1;
  Mat messages;
  Mat q, keys, values;
  Mat alpha;
  Mat heads_concat;
  Mat z;
  DenseCache upd;
  Mat updated;
  PoolResult pool;
};

struct AutoencoderPass {
  BackboneCache backbone;
  DenseCache dec0, dec1;
  Mat output;  // N x 3
};

struct ClassifierPass {
  BackboneCache backbone;
  RowVec logits;
  RowVec probs;
};

AutoencoderPass autoencoder_pass(const Mat& coords, int points_per_frame, const ModelParams& params,
                                 const ModelConfig& config);
// Accumulates parameter gradients of <d_output, output> into `grads`.
void autoencoder_backward(const AutoencoderPass& pass, const Mat& d_output, const ModelParams& params,
                          const ModelConfig& config, ModelParams& grads);

ClassifierPass classifier_pass(const Mat& coords, int points_per_frame, const ModelParams& params,
                               const ModelConfig& config);
// Back-propagates d_logits. `grads` (accumulated) and `d_coords` (overwritten,
// N x 3) are each optional; the graph topology is held constant.
void classifier_backward(const ClassifierPass& pass, const RowVec& d_logits, const ModelParams& params,
                         const ModelConfig& config, ModelParams* grads, Mat* d_coords);

// --- grid-level API ------------------------------------------------------

// Output keeps the frame layout and labels of the input.
FrameGrid autoencoder_forward(const FrameGrid& grid, const ModelParams& params, const ModelConfig& config);
// Throws ConfigError when `params` has no classification head.
std::vector<double> classify(const FrameGrid& grid, const ModelParams& params, const ModelConfig& config);

// Exact copy-through autoencoder (hidden units relu(p) and relu(-p)); needs
// hidden >= 6 and the kGlobal decoder input.
ModelParams copy_through_autoencoder(const ModelConfig& config);

RowVec softmax(const RowVec& logits);

}  // namespace immcognito
