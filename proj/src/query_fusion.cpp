#include "decorfuse/query_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "decorfuse/error.hpp"

namespace decorfuse {

Dense Dense::zeros(int in_features, int out_features) {
  Dense d;
  d.in_features = in_features;
  d.out_features = out_features;
  d.weight.assign(static_cast<std::size_t>(in_features) * out_features, 0.0);
  d.bias.assign(static_cast<std::size_t>(out_features), 0.0);
  return d;
}

Dense Dense::init(int in_features, int out_features, Rng& rng) {
  Dense d = zeros(in_features, out_features);
  const double s = std::sqrt(1.0 / in_features);
  for (double& w : d.weight) w = rng.uniform(-s, s);
  return d;
}

Matrix dense_forward(const Matrix& x, const Dense& layer) {
  if (x.cols != layer.in_features) throw Error(ErrorKind::ShapeMismatch, "dense input width");
  Matrix y(x.rows, layer.out_features);
  for (int r = 0; r < x.rows; ++r) {
    auto yr = y.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), yr.begin());
    const auto xr = x.row(r);
    for (int i = 0; i < layer.in_features; ++i) {
      const double v = xr[i];
      if (v == 0.0) continue;
      const double* w = layer.weight.data() + static_cast<std::size_t>(i) * layer.out_features;
      for (int o = 0; o < layer.out_features; ++o) yr[o] += v * w[o];
    }
  }
  return y;
}

Matrix dense_backward(const Matrix& x, const Dense& layer, const Matrix& cot, Dense& grads) {
  if (cot.rows != x.rows || cot.cols != layer.out_features)
    throw Error(ErrorKind::ShapeMismatch, "dense cotangent");
  Matrix gx(x.rows, layer.in_features);
  for (int r = 0; r < x.rows; ++r) {
    const auto xr = x.row(r);
    const auto cr = cot.row(r);
    auto gr = gx.row(r);
    for (int o = 0; o < layer.out_features; ++o) grads.bias[o] += cr[o];
    for (int i = 0; i < layer.in_features; ++i) {
      const double* w = layer.weight.data() + static_cast<std::size_t>(i) * layer.out_features;
      double* gw = grads.weight.data() + static_cast<std::size_t>(i) * layer.out_features;
      double acc = 0.0;
      for (int o = 0; o < layer.out_features; ++o) {
        acc += w[o] * cr[o];
        gw[o] += xr[i] * cr[o];
      }
      gr[i] = acc;
    }
  }
  return gx;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

HeatmapHead HeatmapHead::init(int in_channels, int hidden, int num_classes, Rng& rng) {
  return {Conv2DLayer::init(3, in_channels, hidden, 1, rng),
          Conv2DLayer::init(1, hidden, num_classes, 1, rng)};
}

Grid2D heatmap_head_forward(const Grid2D& bev, const HeatmapHead& head, HeatmapTape* tape) {
  Grid2D pre1 = conv2d_forward(bev, head.conv1);
  Grid2D act1 = relu(pre1);
  Grid2D probs = conv2d_forward(act1, head.conv2);
  for (double& v : probs.data) v = sigmoid(v);
  if (tape) {
    tape->input = bev;
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
    tape->probs = probs;
  }
  return probs;
}

Grid2D heatmap_head_backward(const HeatmapTape& tape, const HeatmapHead& head,
                             const Grid2D& prob_cot, HeatmapHead& grads) {
  if (!prob_cot.same_shape(tape.probs)) throw Error(ErrorKind::ShapeMismatch, "heatmap cotangent");
  Grid2D logit_cot = prob_cot;
  for (std::size_t k = 0; k < logit_cot.data.size(); ++k) {
    const double p = tape.probs.data[k];
    logit_cot.data[k] *= p * (1.0 - p);
  }
  auto g2 = conv2d_backward(tape.act1, head.conv2, logit_cot);
  add_inplace(grads.conv2.weight, g2.weight);
  add_inplace(grads.conv2.bias, g2.bias);
  auto g1 = conv2d_backward(tape.input, head.conv1, relu_backward(tape.pre1, g2.input));
  add_inplace(grads.conv1.weight, g1.weight);
  add_inplace(grads.conv1.bias, g1.bias);
  return std::move(g1.input);
}

namespace {

bool ranks_before(const ObjectQuery& a, const ObjectQuery& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.i != b.i) return a.i < b.i;
  return a.j < b.j;
}

}  // namespace

std::vector<ObjectQuery> select_queries(const Grid2D& hm, int per_class) {
  if (per_class < 1) throw Error(ErrorKind::InvalidConfig, "queries per class must be >= 1");
  std::vector<ObjectQuery> out;
  for (int k = 0; k < hm.channels; ++k) {
    std::vector<ObjectQuery> cand;
    for (int i = 0; i < hm.height; ++i) {
      for (int j = 0; j < hm.width; ++j) {
        const double v = hm.at(i, j, k);
        bool peak = true;
        for (int di = -1; di <= 1 && peak; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const int ni = i + di, nj = j + dj;
            if (ni < 0 || nj < 0 || ni >= hm.height || nj >= hm.width) continue;
            if (!(v >= hm.at(ni, nj, k))) {
              peak = false;
              break;
            }
          }
        }
        if (peak) cand.push_back({i, j, k, v});
      }
    }
    const std::size_t take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(per_class));
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), ranks_before);
    out.insert(out.end(), cand.begin(), cand.begin() + take);
  }
  return out;
}

std::vector<ObjectQuery> select_queries_topk(const Grid2D& hm, int total) {
  std::vector<ObjectQuery> cand;
  for (int i = 0; i < hm.height; ++i)
    for (int j = 0; j < hm.width; ++j) {
      int best = 0;
      for (int k = 1; k < hm.channels; ++k)
        if (hm.at(i, j, k) > hm.at(i, j, best)) best = k;
      cand.push_back({i, j, best, hm.at(i, j, best)});
    }
  const std::size_t take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(total, 0)));
  std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), ranks_before);
  cand.resize(take);
  return cand;
}

std::vector<double> embed_category(const ObjectQuery& q, std::span<const double> cell_feature,
                                   int num_classes, bool enabled) {
  if (q.class_id < 0 || q.class_id >= num_classes)
    throw Error(ErrorKind::BadClass, "class " + std::to_string(q.class_id) + " outside [0, " +
                                         std::to_string(num_classes) + ")");
  std::vector<double> out(cell_feature.begin(), cell_feature.end());
  if (enabled) {
    out.resize(cell_feature.size() + num_classes, 0.0);
    out[cell_feature.size() + q.class_id] = 1.0;
  }
  return out;
}

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  const double s = std::sqrt(1.0 / rows);
  for (double& v : m.data) v = rng.uniform(-s, s);
  return m;
}

Matrix flatten_cells(const Grid2D& g) {
  Matrix m(g.height * g.width, g.channels);
  m.data = g.data;
  return m;
}

}  // namespace

AttentionParams AttentionParams::init(int query_dim, int camera_channels, int d_model,
                                      int fc_units, double dropout_rate, Rng& rng) {
  if (d_model < 1) throw Error(ErrorKind::InvalidConfig, "d_model must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw Error(ErrorKind::InvalidConfig, "dropout rate must lie in [0, 1)");
  AttentionParams p;
  p.d_model = d_model;
  p.w_q = random_matrix(query_dim, d_model, rng);
  p.w_k = random_matrix(camera_channels, d_model, rng);
  p.w_v = random_matrix(camera_channels, d_model, rng);
  p.fc = Dense::init(d_model, fc_units, rng);
  p.dropout_rate = dropout_rate;
  return p;
}

AttentionParams AttentionParams::zeros_like() const {
  AttentionParams p;
  p.d_model = d_model;
  p.w_q = Matrix(w_q.rows, w_q.cols);
  p.w_k = Matrix(w_k.rows, w_k.cols);
  p.w_v = Matrix(w_v.rows, w_v.cols);
  p.fc = fc.zeros_like();
  p.dropout_rate = dropout_rate;
  return p;
}

void AttentionParams::for_each_param(
    const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  fn("attention.w_q", w_q.data);
  fn("attention.w_k", w_k.data);
  fn("attention.w_v", w_v.data);
  fn("attention.fc.weight", fc.weight);
  fn("attention.fc.bias", fc.bias);
}

bool attention_keep(std::uint64_t seed, int query, int key, double rate) {
  if (rate <= 0.0) return true;
  const std::uint64_t h =
      hash_combine(hash_combine(seed, static_cast<std::uint64_t>(query)), static_cast<std::uint64_t>(key));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u >= rate;
}

Matrix cross_attention(const Matrix& query_in, const Grid2D& camera_bev,
                       const AttentionParams& params, bool training, std::uint64_t seed,
                       AttentionTape* tape) {
  if (camera_bev.height * camera_bev.width == 0)
    throw Error(ErrorKind::EmptyKeySet, "camera BEV map has no cells");
  if (query_in.cols != params.w_q.rows)
    throw Error(ErrorKind::ShapeMismatch, "query width does not match W_q");
  if (camera_bev.channels != params.w_k.rows)
    throw Error(ErrorKind::ShapeMismatch, "camera channels do not match W_k");
  Matrix key_in = flatten_cells(camera_bev);
  Matrix q = matmul(query_in, params.w_q);
  Matrix k = matmul(key_in, params.w_k);
  Matrix v = matmul(key_in, params.w_v);
  Matrix attn = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_model));
  for (int r = 0; r < attn.rows; ++r) {
    auto row = attn.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double& x : row) {
      x *= scale;
      mx = std::max(mx, x);
    }
    double sum = 0.0;
    for (double& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  Matrix used = attn;
  if (training && params.dropout_rate > 0.0) {
    const double keep_scale = 1.0 / (1.0 - params.dropout_rate);
    for (int r = 0; r < used.rows; ++r)
      for (int c = 0; c < used.cols; ++c)
        used(r, c) = attention_keep(seed, r, c, params.dropout_rate) ? used(r, c) * keep_scale : 0.0;
  }
  Matrix out = matmul(used, v);
  if (tape) {
    tape->query_in = query_in;
    tape->key_in = std::move(key_in);
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->attn = std::move(attn);
    tape->attn_used = std::move(used);
    tape->training = training;
    tape->seed = seed;
  }
  return out;
}

AttentionGrads cross_attention_backward(const AttentionTape& tape, const Grid2D& camera_bev,
                                        const AttentionParams& params, const Matrix& cot,
                                        AttentionParams& grads) {
  if (cot.rows != tape.q.rows || cot.cols != params.d_model)
    throw Error(ErrorKind::ShapeMismatch, "attention cotangent");
  Matrix d_used = matmul_nt(cot, tape.v);
  Matrix d_v = matmul_tn(tape.attn_used, cot);
  Matrix d_attn = d_used;
  if (tape.training && params.dropout_rate > 0.0) {
    const double keep_scale = 1.0 / (1.0 - params.dropout_rate);
    for (int r = 0; r < d_attn.rows; ++r)
      for (int c = 0; c < d_attn.cols; ++c)
        d_attn(r, c) = attention_keep(tape.seed, r, c, params.dropout_rate) ? d_attn(r, c) * keep_scale : 0.0;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_model));
  Matrix d_logits(d_attn.rows, d_attn.cols);
  for (int r = 0; r < d_attn.rows; ++r) {
    const auto a = tape.attn.row(r);
    const auto da = d_attn.row(r);
    double dot = 0.0;
    for (int c = 0; c < d_attn.cols; ++c) dot += a[c] * da[c];
    auto dl = d_logits.row(r);
    for (int c = 0; c < d_attn.cols; ++c) dl[c] = a[c] * (da[c] - dot) * scale;
  }
  Matrix d_q = matmul(d_logits, tape.k);
  Matrix d_k = matmul_tn(d_logits, tape.q);

  add_inplace(grads.w_q.data, matmul_tn(tape.query_in, d_q).data);
  add_inplace(grads.w_k.data, matmul_tn(tape.key_in, d_k).data);
  add_inplace(grads.w_v.data, matmul_tn(tape.key_in, d_v).data);

  AttentionGrads g;
  g.query_in = matmul_nt(d_q, params.w_q);
  Matrix d_key = matmul_nt(d_k, params.w_k);
  add_inplace(d_key.data, matmul_nt(d_v, params.w_v).data);
  g.camera_bev = Grid2D(camera_bev.height, camera_bev.width, camera_bev.channels);
  g.camera_bev.data = std::move(d_key.data);
  return g;
}

Matrix fuse(const Matrix& attended, const Grid2D& fused_bev, std::span<const ObjectQuery> queries,
            const AttentionParams& params) {
  if (attended.rows != static_cast<int>(queries.size()))
    throw Error(ErrorKind::ShapeMismatch, "one attended row per query");
  Matrix projected = dense_forward(attended, params.fc);
  const int fc_units = params.fc.out_features;
  Matrix out(attended.rows, fc_units + fused_bev.channels);
  for (int r = 0; r < out.rows; ++r) {
    auto dst = out.row(r);
    const auto p = projected.row(r);
    std::copy(p.begin(), p.end(), dst.begin());
    const auto cell = fused_bev.cell(queries[r].i, queries[r].j);
    std::copy(cell.begin(), cell.end(), dst.begin() + fc_units);
  }
  return out;
}

FuseGrads fuse_backward(const Matrix& attended, const Grid2D& fused_bev,
                        std::span<const ObjectQuery> queries, const AttentionParams& params,
                        const Matrix& cot, AttentionParams& grads) {
  const int fc_units = params.fc.out_features;
  if (cot.rows != attended.rows || cot.cols != fc_units + fused_bev.channels)
    throw Error(ErrorKind::ShapeMismatch, "fuse cotangent");
  Matrix d_proj(cot.rows, fc_units);
  FuseGrads g;
  g.fused_bev = Grid2D(fused_bev.height, fused_bev.width, fused_bev.channels);
  for (int r = 0; r < cot.rows; ++r) {
    const auto c = cot.row(r);
    std::copy(c.begin(), c.begin() + fc_units, d_proj.row(r).begin());
    auto cell = g.fused_bev.cell(queries[r].i, queries[r].j);
    for (int k = 0; k < fused_bev.channels; ++k) cell[k] += c[fc_units + k];
  }
  g.attended = dense_backward(attended, params.fc, d_proj, grads.fc);
  return g;
}

}  // namespace decorfuse
