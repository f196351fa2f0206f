#include "immcognito/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>
#include <string>

#include "immcognito/errors.hpp"
#include "immcognito/rng.hpp"

namespace immcognito {

DecoderInput parse_decoder_input(std::string_view name) {
  if (name == "global") return DecoderInput::kGlobal;
  if (name == "global_and_local") return DecoderInput::kGlobalAndLocal;
  if (name == "local") return DecoderInput::kLocal;
  throw ConfigError("unknown decoder input '" + std::string(name) + "'");
}

std::string_view to_string(DecoderInput input) {
  switch (input) {
    case DecoderInput::kGlobal: return "global";
    case DecoderInput::kGlobalAndLocal: return "global_and_local";
    case DecoderInput::kLocal: return "local";
  }
  return "global";
}

void ModelConfig::validate() const {
  if (hidden < 1 || message < 1 || key_dim < 1 || value_dim < 1 || heads < 1 || output_dim < 1)
    throw ConfigError("model dimensions must be positive");
  if (k < 1) throw ConfigError("neighbor count k must be >= 1");
}

namespace {

enum class Act { kNone, kRelu };

int decoder_width(const ModelConfig& c) {
  switch (c.decoder_input) {
    case DecoderInput::kGlobal: return 3 + c.hidden;
    case DecoderInput::kGlobalAndLocal: return 3 + 2 * c.hidden;
    case DecoderInput::kLocal: return 3 + c.hidden;
  }
  return 3 + c.hidden;
}

Dense make_dense(int in, int out, Act act, Rng& rng) {
  // He-uniform for ReLU layers, Glorot-uniform otherwise.
  const double limit =
      act == Act::kRelu ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (static_cast<double>(in) + out));
  Dense d{Mat(in, out), Mat::Zero(1, out)};
  for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = limit * (2.0 * uniform01(rng) - 1.0);
  return d;
}

Mat make_matrix(int in, int out, Rng& rng) { return make_dense(in, out, Act::kNone, rng).weight; }

ModelParams init_backbone(const ModelConfig& c, Rng& rng) {
  c.validate();
  ModelParams p;
  p.encoder0 = make_dense(3, c.hidden, Act::kRelu, rng);
  p.encoder1 = make_dense(c.hidden, c.hidden, Act::kRelu, rng);
  p.message0 = make_dense(2 * c.hidden, c.message, Act::kRelu, rng);
  p.message1 = make_dense(c.message, c.message, Act::kRelu, rng);
  p.query = make_matrix(c.hidden, c.heads * c.key_dim, rng);
  p.key = make_matrix(c.message, c.heads * c.key_dim, rng);
  p.value = make_matrix(c.message, c.heads * c.value_dim, rng);
  p.output = make_matrix(c.heads * c.value_dim, c.output_dim, rng);
  p.update = make_dense(c.hidden + c.output_dim, c.hidden, Act::kRelu, rng);
  return p;
}

Mat dense_forward(const Dense& layer, const Mat& x, Act act, DenseCache* cache) {
  Mat pre = x * layer.weight;
  pre.rowwise() += layer.bias.row(0);
  Mat out = act == Act::kRelu ? Mat(pre.cwiseMax(0.0)) : pre;
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return out;
}

// Returns d_input; accumulates into `grad` when given.
Mat dense_backward(const Dense& layer, const DenseCache& cache, Act act, const Mat& dy, Dense* grad,
                   bool need_input_grad = true) {
  Mat dpre = dy;
  if (act == Act::kRelu) dpre.array() *= (cache.pre.array() > 0.0).cast<double>();
  if (grad) {
    grad->weight.noalias() += cache.input.transpose() * dpre;
    grad->bias += dpre.colwise().sum();
  }
  if (!need_input_grad) return {};
  return dpre * layer.weight.transpose();
}

Mat message_inputs(const TemporalGraph& g, const Mat& h) {
  const Eigen::Index d = h.cols();
  Mat x(static_cast<Eigen::Index>(g.edges.size()), 2 * d);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    double* out = x.row(static_cast<Eigen::Index>(e)).data();
    const double* hi = h.row(g.edges[e].dst).data();
    const double* hj = h.row(g.edges[e].src).data();
    for (Eigen::Index t = 0; t < d; ++t) {
      out[t] = hi[t];
      out[d + t] = hj[t] - hi[t];
    }
  }
  return x;
}

// Attention core shared by the public op and the cached pass.
void attention_forward(const TemporalGraph& g, const Mat& q, const Mat& keys, const Mat& values,
                       const ModelConfig& c, Mat& alpha, Mat& concat) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const int dk = c.key_dim, dv = c.value_dim, heads = c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  alpha.setZero(static_cast<Eigen::Index>(g.edges.size()), heads);
  concat.setZero(n, heads * dv);
  std::vector<double> logits;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int begin = g.in_offsets[i], end = g.in_offsets[i + 1];
    if (begin == end) continue;
    logits.resize(static_cast<std::size_t>(end - begin));
    for (int b = 0; b < heads; ++b) {
      const double* qi = q.row(i).data() + b * dk;
      double top = -std::numeric_limits<double>::infinity();
      for (int e = begin; e < end; ++e) {
        const double* ke = keys.row(e).data() + b * dk;
        double s = 0.0;
        for (int t = 0; t < dk; ++t) s += qi[t] * ke[t];
        s *= scale;
        logits[e - begin] = s;
        top = std::max(top, s);
      }
      double total = 0.0;
      for (double& s : logits) {
        s = std::exp(s - top);
        total += s;
      }
      double* zi = concat.row(i).data() + b * dv;
      for (int e = begin; e < end; ++e) {
        const double a = logits[e - begin] / total;
        alpha(e, b) = a;
        const double* ve = values.row(e).data() + b * dv;
        for (int t = 0; t < dv; ++t) zi[t] += a * ve[t];
      }
    }
  }
}

Mat decoder_input(const Mat& coords, const RowVec& pooled, const Mat* local, const ModelConfig& c) {
  const Eigen::Index n = coords.rows();
  Mat x(n, decoder_width(c));
  x.leftCols(3) = coords;
  switch (c.decoder_input) {
    case DecoderInput::kGlobal:
      x.rightCols(c.hidden) = pooled.replicate(n, 1);
      break;
    case DecoderInput::kGlobalAndLocal:
      x.middleCols(3, c.hidden) = pooled.replicate(n, 1);
      x.rightCols(c.hidden) = *local;
      break;
    case DecoderInput::kLocal:
      x.rightCols(c.hidden) = *local;
      break;
  }
  return x;
}

BackboneCache backbone_forward(const Mat& coords, int points_per_frame, const ModelParams& p, const ModelConfig& c,
                               GraphMode mode) {
  BackboneCache bc;
  bc.graph = build_temporal_graph(coords, points_per_frame, c.k, mode);
  Mat h0 = dense_forward(p.encoder0, coords, Act::kRelu, &bc.enc0);
  bc.h = dense_forward(p.encoder1, h0, Act::kRelu, &bc.enc1);
  Mat m0 = dense_forward(p.message0, message_inputs(bc.graph, bc.h), Act::kRelu, &bc.msg0);
  bc.messages = dense_forward(p.message1, m0, Act::kRelu, &bc.msg1);
  bc.q = bc.h * p.query;
  bc.keys = bc.messages * p.key;
  bc.values = bc.messages * p.value;
  attention_forward(bc.graph, bc.q, bc.keys, bc.values, c, bc.alpha, bc.heads_concat);
  bc.z = bc.heads_concat * p.output;
  Mat upd_in(bc.h.rows(), c.hidden + c.output_dim);
  upd_in << bc.h, bc.z;
  bc.updated = dense_forward(p.update, upd_in, Act::kRelu, &bc.upd);
  bc.pool = global_max_pool(bc.updated);
  return bc;
}

// Back-propagates d_updated (N x d_h) through the backbone. Returns
// d_coords when requested.
void backbone_backward(const BackboneCache& bc, const Mat& d_updated, const ModelParams& p, const ModelConfig& c,
                       ModelParams* grads, Mat* d_coords) {
  const TemporalGraph& g = bc.graph;
  const Eigen::Index n = bc.h.rows();
  const int dk = c.key_dim, dv = c.value_dim, heads = c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Mat d_upd_in = dense_backward(p.update, bc.upd, Act::kRelu, d_updated, grads ? &grads->update : nullptr);
  Mat dh = d_upd_in.leftCols(c.hidden);
  const Mat dz = d_upd_in.rightCols(c.output_dim);

  if (grads) grads->output.noalias() += bc.heads_concat.transpose() * dz;
  const Mat d_concat = dz * p.output.transpose();

  Mat dq = Mat::Zero(n, heads * dk);
  Mat d_keys = Mat::Zero(bc.keys.rows(), heads * dk);
  Mat d_values = Mat::Zero(bc.values.rows(), heads * dv);
  std::vector<double> d_alpha;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int begin = g.in_offsets[i], end = g.in_offsets[i + 1];
    if (begin == end) continue;
    d_alpha.resize(static_cast<std::size_t>(end - begin));
    for (int b = 0; b < heads; ++b) {
      const double* dzi = d_concat.row(i).data() + b * dv;
      double weighted = 0.0;
      for (int e = begin; e < end; ++e) {
        const double* ve = bc.values.row(e).data() + b * dv;
        double* dve = d_values.row(e).data() + b * dv;
        const double a = bc.alpha(e, b);
        double da = 0.0;
        for (int t = 0; t < dv; ++t) {
          da += dzi[t] * ve[t];
          dve[t] = a * dzi[t];
        }
        d_alpha[e - begin] = da;
        weighted += a * da;
      }
      const double* qi = bc.q.row(i).data() + b * dk;
      double* dqi = dq.row(i).data() + b * dk;
      for (int e = begin; e < end; ++e) {
        const double ds = bc.alpha(e, b) * (d_alpha[e - begin] - weighted) * scale;
        const double* ke = bc.keys.row(e).data() + b * dk;
        double* dke = d_keys.row(e).data() + b * dk;
        for (int t = 0; t < dk; ++t) {
          dqi[t] += ds * ke[t];
          dke[t] = ds * qi[t];
        }
      }
    }
  }
  if (grads) {
    grads->query.noalias() += bc.h.transpose() * dq;
    grads->key.noalias() += bc.messages.transpose() * d_keys;
    grads->value.noalias() += bc.messages.transpose() * d_values;
  }
  dh.noalias() += dq * p.query.transpose();
  Mat d_messages = d_keys * p.key.transpose();
  d_messages.noalias() += d_values * p.value.transpose();

  const Mat dm0 = dense_backward(p.message1, bc.msg1, Act::kRelu, d_messages, grads ? &grads->message1 : nullptr);
  const Mat d_msg_in = dense_backward(p.message0, bc.msg0, Act::kRelu, dm0, grads ? &grads->message0 : nullptr);
  const Eigen::Index d = c.hidden;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double* in = d_msg_in.row(static_cast<Eigen::Index>(e)).data();
    double* di = dh.row(g.edges[e].dst).data();
    double* dj = dh.row(g.edges[e].src).data();
    for (Eigen::Index t = 0; t < d; ++t) {
      di[t] += in[t] - in[d + t];
      dj[t] += in[d + t];
    }
  }

  const Mat dh0 = dense_backward(p.encoder1, bc.enc1, Act::kRelu, dh, grads ? &grads->encoder1 : nullptr);
  Mat d_in = dense_backward(p.encoder0, bc.enc0, Act::kRelu, dh0, grads ? &grads->encoder0 : nullptr,
                            d_coords != nullptr);
  if (d_coords) *d_coords = std::move(d_in);
}

void append(std::vector<std::pair<std::string, Mat*>>& out, const std::string& name, Dense& d) {
  out.emplace_back(name + ".weight", &d.weight);
  out.emplace_back(name + ".bias", &d.bias);
}

}  // namespace

std::vector<std::pair<std::string, Mat*>> named_tensors(ModelParams& p) {
  std::vector<std::pair<std::string, Mat*>> out;
  append(out, "encoder.0", p.encoder0);
  append(out, "encoder.1", p.encoder1);
  append(out, "message.0", p.message0);
  append(out, "message.1", p.message1);
  out.emplace_back("attention.query", &p.query);
  out.emplace_back("attention.key", &p.key);
  out.emplace_back("attention.value", &p.value);
  out.emplace_back("attention.output", &p.output);
  append(out, "update", p.update);
  if (p.has_decoder) {
    append(out, "decoder.0", p.decoder0);
    append(out, "decoder.1", p.decoder1);
  }
  if (p.has_head) append(out, "head", p.head);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> named_tensors(const ModelParams& params) {
  auto mutable_view = named_tensors(const_cast<ModelParams&>(params));
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, ptr] : mutable_view) out.emplace_back(std::move(name), ptr);
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : named_tensors(params)) total += static_cast<std::size_t>(t->size());
  return total;
}

ModelParams init_autoencoder(const ModelConfig& config) {
  Rng rng(derive_seed(config.seed, {0xae}));
  ModelParams p = init_backbone(config, rng);
  p.decoder0 = make_dense(decoder_width(config), config.hidden, Act::kRelu, rng);
  p.decoder1 = make_dense(config.hidden, 3, Act::kNone, rng);
  p.has_decoder = true;
  round_to_float(p);
  return p;
}

ModelParams init_classifier(const ModelConfig& config, int num_classes) {
  if (num_classes < 2) throw ConfigError("a classifier needs at least two classes");
  Rng rng(derive_seed(config.seed, {0xc1, static_cast<std::uint64_t>(num_classes)}));
  ModelParams p = init_backbone(config, rng);
  p.head = make_dense(config.hidden, num_classes, Act::kNone, rng);
  p.has_head = true;
  round_to_float(p);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& [name, t] : named_tensors(z)) t->setZero();
  return z;
}

void check_shapes(const ModelParams& params, const ModelConfig& c) {
  ModelParams expected;
  Rng rng(0);
  expected = init_backbone(c, rng);
  if (params.has_decoder) {
    expected.decoder0 = make_dense(decoder_width(c), c.hidden, Act::kRelu, rng);
    expected.decoder1 = make_dense(c.hidden, 3, Act::kNone, rng);
    expected.has_decoder = true;
  }
  if (params.has_head) {
    expected.head = make_dense(c.hidden, params.num_classes(), Act::kNone, rng);
    expected.has_head = true;
  }
  const auto want = named_tensors(expected);
  const auto have = named_tensors(params);
  for (std::size_t i = 0; i < want.size(); ++i) {
    const Mat& a = *want[i].second;
    const Mat& b = *have[i].second;
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw ConfigError("tensor " + want[i].first + " has shape " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ", config expects " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()));
  }
}

void round_to_float(ModelParams& params) {
  for (auto& [name, t] : named_tensors(params))
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = static_cast<float>(t->data()[i]);
}

std::uint64_t checksum(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_tensors(params)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(t->size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Mat encode_nodes(const Mat& coords, const ModelParams& p) {
  return dense_forward(p.encoder1, dense_forward(p.encoder0, coords, Act::kRelu, nullptr), Act::kRelu, nullptr);
}

Mat generate_messages(const TemporalGraph& graph, const Mat& h, const ModelParams& p) {
  if (static_cast<std::size_t>(h.rows()) != graph.num_nodes()) throw DomainError("features and graph disagree on N");
  const Mat m0 = dense_forward(p.message0, message_inputs(graph, h), Act::kRelu, nullptr);
  return dense_forward(p.message1, m0, Act::kRelu, nullptr);
}

AttentionResult aggregate_attention(const TemporalGraph& graph, const Mat& h, const Mat& messages,
                                    const ModelParams& p, const ModelConfig& config) {
  AttentionResult r;
  Mat concat;
  attention_forward(graph, h * p.query, messages * p.key, messages * p.value, config, r.alpha, concat);
  r.z = concat * p.output;
  return r;
}

Mat update_nodes(const Mat& h, const Mat& z, const ModelParams& p) {
  Mat in(h.rows(), h.cols() + z.cols());
  in << h, z;
  return dense_forward(p.update, in, Act::kRelu, nullptr);
}

PoolResult global_max_pool(const Mat& h) {
  if (h.rows() < 1) throw DomainError("max pool over an empty point set");
  PoolResult r;
  r.values = h.row(0);
  r.argmax.assign(static_cast<std::size_t>(h.cols()), 0);
  for (Eigen::Index i = 1; i < h.rows(); ++i) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      if (h(i, c) > r.values(c)) {
        r.values(c) = h(i, c);
        r.argmax[static_cast<std::size_t>(c)] = static_cast<int>(i);
      }
    }
  }
  return r;
}

Mat decode(const Mat& coords, const RowVec& pooled, const ModelParams& p, const ModelConfig& config,
           const Mat* local) {
  if (!p.has_decoder) throw ConfigError("parameters have no decoder");
  if (config.decoder_input != DecoderInput::kGlobal && local == nullptr)
    throw ConfigError("decoder input mode needs per-node features");
  const Mat x = decoder_input(coords, pooled, local, config);
  return dense_forward(p.decoder1, dense_forward(p.decoder0, x, Act::kRelu, nullptr), Act::kNone, nullptr);
}

AutoencoderPass autoencoder_pass(const Mat& coords, int points_per_frame, const ModelParams& p,
                                 const ModelConfig& c) {
  if (!p.has_decoder) throw ConfigError("parameters have no decoder");
  AutoencoderPass pass;
  pass.backbone = backbone_forward(coords, points_per_frame, p, c, c.graph_mode);
  const Mat x = decoder_input(coords, pass.backbone.pool.values, &pass.backbone.updated, c);
  const Mat hidden = dense_forward(p.decoder0, x, Act::kRelu, &pass.dec0);
  pass.output = dense_forward(p.decoder1, hidden, Act::kNone, &pass.dec1);
  return pass;
}

void autoencoder_backward(const AutoencoderPass& pass, const Mat& d_output, const ModelParams& p,
                          const ModelConfig& c, ModelParams& grads) {
  const Mat d_hidden = dense_backward(p.decoder1, pass.dec1, Act::kNone, d_output, &grads.decoder1);
  const Mat dx = dense_backward(p.decoder0, pass.dec0, Act::kRelu, d_hidden, &grads.decoder0);
  const BackboneCache& bc = pass.backbone;
  Mat d_updated = Mat::Zero(bc.updated.rows(), bc.updated.cols());
  auto route_pooled = [&](const RowVec& d_pooled) {
    for (std::size_t col = 0; col < bc.pool.argmax.size(); ++col)
      d_updated(bc.pool.argmax[col], static_cast<Eigen::Index>(col)) += d_pooled(static_cast<Eigen::Index>(col));
  };
  switch (c.decoder_input) {
    case DecoderInput::kGlobal:
      route_pooled(dx.rightCols(c.hidden).colwise().sum());
      break;
    case DecoderInput::kGlobalAndLocal:
      route_pooled(dx.middleCols(3, c.hidden).colwise().sum());
      d_updated += dx.rightCols(c.hidden);
      break;
    case DecoderInput::kLocal:
      d_updated += dx.rightCols(c.hidden);
      break;
  }
  backbone_backward(bc, d_updated, p, c, &grads, nullptr);
}

ClassifierPass classifier_pass(const Mat& coords, int points_per_frame, const ModelParams& p, const ModelConfig& c) {
  if (!p.has_head) throw ConfigError("parameters have no classification head");
  ClassifierPass pass;
  // Classifiers always read the standard temporal graph.
  pass.backbone = backbone_forward(coords, points_per_frame, p, c, GraphMode::kTemporal);
  pass.logits = pass.backbone.pool.values * p.head.weight + p.head.bias;
  pass.probs = softmax(pass.logits);
  return pass;
}

void classifier_backward(const ClassifierPass& pass, const RowVec& d_logits, const ModelParams& p,
                         const ModelConfig& c, ModelParams* grads, Mat* d_coords) {
  const BackboneCache& bc = pass.backbone;
  if (grads) {
    grads->head.weight.noalias() += bc.pool.values.transpose() * d_logits;
    grads->head.bias += d_logits;
  }
  const RowVec d_pooled = d_logits * p.head.weight.transpose();
  Mat d_updated = Mat::Zero(bc.updated.rows(), bc.updated.cols());
  for (std::size_t col = 0; col < bc.pool.argmax.size(); ++col)
    d_updated(bc.pool.argmax[col], static_cast<Eigen::Index>(col)) = d_pooled(static_cast<Eigen::Index>(col));
  backbone_backward(bc, d_updated, p, c, grads, d_coords);
}

FrameGrid autoencoder_forward(const FrameGrid& grid, const ModelParams& params, const ModelConfig& config) {
  const AutoencoderPass pass = autoencoder_pass(grid_coords(grid), grid.points_per_frame, params, config);
  FrameGrid out = grid;
  for (std::size_t n = 0; n < grid.num_points(); ++n)
    for (int a = 0; a < 3; ++a) out.at(n, a) = static_cast<float>(pass.output(static_cast<Eigen::Index>(n), a));
  return out;
}

std::vector<double> classify(const FrameGrid& grid, const ModelParams& params, const ModelConfig& config) {
  const ClassifierPass pass = classifier_pass(grid_coords(grid), grid.points_per_frame, params, config);
  return {pass.probs.data(), pass.probs.data() + pass.probs.size()};
}

ModelParams copy_through_autoencoder(const ModelConfig& config) {
  if (config.hidden < 6 || config.decoder_input != DecoderInput::kGlobal)
    throw ConfigError("copy-through autoencoder needs hidden >= 6 and the global decoder input");
  ModelParams p = zeros_like(init_autoencoder(config));
  for (int a = 0; a < 3; ++a) {
    p.decoder0.weight(a, a) = 1.0;
    p.decoder0.weight(a, 3 + a) = -1.0;
    p.decoder1.weight(a, a) = 1.0;
    p.decoder1.weight(3 + a, a) = -1.0;
  }
  return p;
}

RowVec softmax(const RowVec& logits) {
  const double top = logits.maxCoeff();
  RowVec e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

}  // namespace immcognito
