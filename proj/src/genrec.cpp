#include "fusid/genrec.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include "fusid/io.hpp"

namespace fusid {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Row-wise layer norm; xhat and inv_std are written for the backward pass.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale,
                           const Eigen::VectorXd& shift, Eigen::MatrixXd* xhat_out,
                           Eigen::VectorXd* inv_out) {
  constexpr double kEps = 1e-5;
  const auto rows = x.rows();
  const auto cols = x.cols();
  Eigen::MatrixXd xhat(rows, cols);
  Eigen::VectorXd inv(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().sum() / static_cast<double>(cols);
    inv[i] = 1.0 / std::sqrt(var + kEps);
    xhat.row(i) = ((x.row(i).array() - mu) * inv[i]).matrix();
  }
  Eigen::MatrixXd out = (xhat * scale.asDiagonal()).rowwise() + shift.transpose();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_out) *inv_out = std::move(inv);
  return out;
}

// d(loss)/d(x) for y = LN(x)*scale + shift given upstream dy.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv, const Eigen::VectorXd& scale,
                                    Eigen::VectorXd& d_scale, Eigen::VectorXd& d_shift) {
  const auto rows = dy.rows();
  const auto cols = dy.cols();
  d_scale += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  d_shift += dy.colwise().sum().transpose();

  Eigen::MatrixXd dx(rows, cols);
  const double n = static_cast<double>(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::ArrayXd dxhat = dy.row(i).transpose().array() * scale.array();
    Eigen::ArrayXd xh = xhat.row(i).transpose().array();
    double s1 = dxhat.sum();
    double s2 = (dxhat * xh).sum();
    dx.row(i) = ((inv[i] / n) * (n * dxhat - s1 - xh * s2)).matrix().transpose();
  }
  return dx;
}

struct BlockCache {
  Eigen::MatrixXd ln1_xhat, ln1_out;
  Eigen::VectorXd ln1_inv;
  Eigen::MatrixXd q, k, v;                // T x D
  std::vector<Eigen::MatrixXd> probs;     // per head, T x T (causal rows)
  Eigen::MatrixXd concat;                 // T x D, heads concatenated
  Eigen::MatrixXd x_mid;                  // after attention residual
  Eigen::MatrixXd ln2_xhat, ln2_out;
  Eigen::VectorXd ln2_inv;
  Eigen::MatrixXd ff_pre, ff_act;         // T x d_ff
};

struct ForwardCache {
  Eigen::MatrixXd x0;  // embeddings + positions
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd lnf_xhat, h_final;
  Eigen::VectorXd lnf_inv;
  Eigen::MatrixXd probs;  // softmax over vocab, T x V
};

Eigen::MatrixXd forward_cached(const RecModel& model, const std::vector<int>& tokens,
                               ForwardCache* cache) {
  const auto t_len = static_cast<Eigen::Index>(tokens.size());
  const int d_model = model.cfg.d_model;
  const int heads = model.cfg.heads;
  const int dh = d_model / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (t_len == 0) {
    throw DataError("cannot run the recommender on an empty token sequence");
  }
  if (t_len > model.cfg.max_len) {
    throw DataError("sequence length " + std::to_string(t_len) + " exceeds max_len " +
                    std::to_string(model.cfg.max_len));
  }

  Eigen::MatrixXd x(t_len, d_model);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    int tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= model.vocab.size()) {
      throw DataError("token id " + std::to_string(tok) + " outside the vocabulary");
    }
    x.row(t) = model.tok_emb.row(tok) + model.pos_emb.row(t);
  }
  if (cache) {
    cache->x0 = x;
    cache->blocks.resize(model.blocks.size());
  }

  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const RecBlock& blk = model.blocks[l];
    BlockCache* bc = cache ? &cache->blocks[l] : nullptr;

    Eigen::MatrixXd ln1_xhat;
    Eigen::VectorXd ln1_inv;
    Eigen::MatrixXd ln1_out =
        layer_norm(x, blk.ln1_scale, blk.ln1_shift, bc ? &ln1_xhat : nullptr,
                   bc ? &ln1_inv : nullptr);

    Eigen::MatrixXd q = (ln1_out * blk.wq.transpose()).rowwise() + blk.bq.transpose();
    Eigen::MatrixXd k = (ln1_out * blk.wk.transpose()).rowwise() + blk.bk.transpose();
    Eigen::MatrixXd v = (ln1_out * blk.wv.transpose()).rowwise() + blk.bv.transpose();

    Eigen::MatrixXd concat(t_len, d_model);
    std::vector<Eigen::MatrixXd> probs;
    if (bc) probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto qh = q.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
      auto kh = k.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
      auto vh = v.middleCols(static_cast<Eigen::Index>(h) * dh, dh);

      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(t_len, t_len);
      for (Eigen::Index i = 0; i < t_len; ++i) {
        // Causal: attend to positions 0..i only.
        Eigen::VectorXd scores = (kh.topRows(i + 1) * qh.row(i).transpose()) * att_scale;
        double m = scores.maxCoeff();
        Eigen::VectorXd e = (scores.array() - m).exp();
        p.row(i).head(i + 1) = (e / e.sum()).transpose();
      }
      concat.middleCols(static_cast<Eigen::Index>(h) * dh, dh) = p * vh;
      if (bc) probs[static_cast<std::size_t>(h)] = std::move(p);
    }

    Eigen::MatrixXd attn_out = (concat * blk.wo.transpose()).rowwise() + blk.bo.transpose();
    Eigen::MatrixXd x_mid = x + attn_out;

    Eigen::MatrixXd ln2_xhat;
    Eigen::VectorXd ln2_inv;
    Eigen::MatrixXd ln2_out =
        layer_norm(x_mid, blk.ln2_scale, blk.ln2_shift, bc ? &ln2_xhat : nullptr,
                   bc ? &ln2_inv : nullptr);

    Eigen::MatrixXd ff_pre = (ln2_out * blk.w_ff1.transpose()).rowwise() + blk.b_ff1.transpose();
    Eigen::MatrixXd ff_act = ff_pre.unaryExpr([](double v) { return gelu(v); });
    Eigen::MatrixXd ff_out = (ff_act * blk.w_ff2.transpose()).rowwise() + blk.b_ff2.transpose();

    Eigen::MatrixXd x_next = x_mid + ff_out;

    if (bc) {
      bc->ln1_xhat = std::move(ln1_xhat);
      bc->ln1_inv = std::move(ln1_inv);
      bc->ln1_out = std::move(ln1_out);
      bc->q = std::move(q);
      bc->k = std::move(k);
      bc->v = std::move(v);
      bc->probs = std::move(probs);
      bc->concat = std::move(concat);
      bc->x_mid = x_mid;
      bc->ln2_xhat = std::move(ln2_xhat);
      bc->ln2_inv = std::move(ln2_inv);
      bc->ln2_out = std::move(ln2_out);
      bc->ff_pre = std::move(ff_pre);
      bc->ff_act = std::move(ff_act);
    }
    x = std::move(x_next);
  }

  Eigen::MatrixXd lnf_xhat;
  Eigen::VectorXd lnf_inv;
  Eigen::MatrixXd h_final = layer_norm(x, model.lnf_scale, model.lnf_shift,
                                       cache ? &lnf_xhat : nullptr, cache ? &lnf_inv : nullptr);
  const Eigen::MatrixXd& w_out = model.cfg.tie_output ? model.tok_emb : model.w_out;
  Eigen::MatrixXd logits = (h_final * w_out.transpose()).rowwise() + model.b_out.transpose();

  if (cache) {
    cache->lnf_xhat = std::move(lnf_xhat);
    cache->lnf_inv = std::move(lnf_inv);
    cache->h_final = std::move(h_final);
  }
  return logits;
}

RecBlock zero_block(int d_model, int d_ff) {
  RecBlock b;
  b.ln1_scale = Eigen::VectorXd::Zero(d_model);
  b.ln1_shift = Eigen::VectorXd::Zero(d_model);
  b.wq = Eigen::MatrixXd::Zero(d_model, d_model);
  b.wk = Eigen::MatrixXd::Zero(d_model, d_model);
  b.wv = Eigen::MatrixXd::Zero(d_model, d_model);
  b.wo = Eigen::MatrixXd::Zero(d_model, d_model);
  b.bq = Eigen::VectorXd::Zero(d_model);
  b.bk = Eigen::VectorXd::Zero(d_model);
  b.bv = Eigen::VectorXd::Zero(d_model);
  b.bo = Eigen::VectorXd::Zero(d_model);
  b.ln2_scale = Eigen::VectorXd::Zero(d_model);
  b.ln2_shift = Eigen::VectorXd::Zero(d_model);
  b.w_ff1 = Eigen::MatrixXd::Zero(d_ff, d_model);
  b.b_ff1 = Eigen::VectorXd::Zero(d_ff);
  b.w_ff2 = Eigen::MatrixXd::Zero(d_model, d_ff);
  b.b_ff2 = Eigen::VectorXd::Zero(d_model);
  return b;
}

RecGradients zero_gradients(const RecModel& model) {
  RecGradients g;
  g.tok_emb = Eigen::MatrixXd::Zero(model.tok_emb.rows(), model.tok_emb.cols());
  g.pos_emb = Eigen::MatrixXd::Zero(model.pos_emb.rows(), model.pos_emb.cols());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    g.blocks.push_back(zero_block(model.cfg.d_model, model.cfg.ff_dim()));
  }
  g.lnf_scale = Eigen::VectorXd::Zero(model.lnf_scale.size());
  g.lnf_shift = Eigen::VectorXd::Zero(model.lnf_shift.size());
  g.w_out = Eigen::MatrixXd::Zero(model.w_out.rows(), model.w_out.cols());
  g.b_out = Eigen::VectorXd::Zero(model.b_out.size());
  return g;
}

template <class Fn>
void for_each_rec_param(RecModel& m, RecGradients& g, Fn&& fn) {
  fn(m.tok_emb, g.tok_emb);
  fn(m.pos_emb, g.pos_emb);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& mb = m.blocks[l];
    auto& gb = g.blocks[l];
    fn(mb.ln1_scale, gb.ln1_scale);
    fn(mb.ln1_shift, gb.ln1_shift);
    fn(mb.wq, gb.wq);
    fn(mb.bq, gb.bq);
    fn(mb.wk, gb.wk);
    fn(mb.bk, gb.bk);
    fn(mb.wv, gb.wv);
    fn(mb.bv, gb.bv);
    fn(mb.wo, gb.wo);
    fn(mb.bo, gb.bo);
    fn(mb.ln2_scale, gb.ln2_scale);
    fn(mb.ln2_shift, gb.ln2_shift);
    fn(mb.w_ff1, gb.w_ff1);
    fn(mb.b_ff1, gb.b_ff1);
    fn(mb.w_ff2, gb.w_ff2);
    fn(mb.b_ff2, gb.b_ff2);
  }
  fn(m.lnf_scale, g.lnf_scale);
  fn(m.lnf_shift, g.lnf_shift);
  fn(m.w_out, g.w_out);
  fn(m.b_out, g.b_out);
}

// Backward for one sequence; dlogits carries the per-position loss gradient.
void backward_sequence(const RecModel& model, const std::vector<int>& tokens,
                       const ForwardCache& cache, const Eigen::MatrixXd& dlogits,
                       RecGradients& g) {
  const int d_model = model.cfg.d_model;
  const int heads = model.cfg.heads;
  const int dh = d_model / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto t_len = static_cast<Eigen::Index>(tokens.size());

  const Eigen::MatrixXd& w_out = model.cfg.tie_output ? model.tok_emb : model.w_out;
  Eigen::MatrixXd dh_final = dlogits * w_out;
  if (model.cfg.tie_output) {
    g.tok_emb += dlogits.transpose() * cache.h_final;
  } else {
    g.w_out += dlogits.transpose() * cache.h_final;
  }
  g.b_out += dlogits.colwise().sum().transpose();

  Eigen::MatrixXd dx = layer_norm_backward(dh_final, cache.lnf_xhat, cache.lnf_inv,
                                           model.lnf_scale, g.lnf_scale, g.lnf_shift);

  for (int l = static_cast<int>(model.blocks.size()) - 1; l >= 0; --l) {
    const RecBlock& blk = model.blocks[static_cast<std::size_t>(l)];
    RecBlock& gb = g.blocks[static_cast<std::size_t>(l)];
    const BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];

    // FFN branch: x_next = x_mid + W2 * gelu(W1 * ln2(x_mid)).
    Eigen::MatrixXd d_ff_out = dx;  // residual passes dx through unchanged
    gb.w_ff2 += d_ff_out.transpose() * bc.ff_act;
    gb.b_ff2 += d_ff_out.colwise().sum().transpose();
    Eigen::MatrixXd d_ff_act = d_ff_out * blk.w_ff2;
    Eigen::MatrixXd d_ff_pre =
        (d_ff_act.array() * bc.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }).array())
            .matrix();
    gb.w_ff1 += d_ff_pre.transpose() * bc.ln2_out;
    gb.b_ff1 += d_ff_pre.colwise().sum().transpose();
    Eigen::MatrixXd d_ln2_out = d_ff_pre * blk.w_ff1;
    Eigen::MatrixXd dx_mid = dx + layer_norm_backward(d_ln2_out, bc.ln2_xhat, bc.ln2_inv,
                                                      blk.ln2_scale, gb.ln2_scale, gb.ln2_shift);

    // Attention branch: x_mid = x + Wo * concat(heads).
    gb.wo += dx_mid.transpose() * bc.concat;
    gb.bo += dx_mid.colwise().sum().transpose();
    Eigen::MatrixXd d_concat = dx_mid * blk.wo;

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(t_len, d_model);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(t_len, d_model);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(t_len, d_model);
    for (int h = 0; h < heads; ++h) {
      const Eigen::MatrixXd& p = bc.probs[static_cast<std::size_t>(h)];
      auto kh = bc.k.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
      auto qh = bc.q.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
      auto vh = bc.v.middleCols(static_cast<Eigen::Index>(h) * dh, dh);
      auto d_oh = d_concat.middleCols(static_cast<Eigen::Index>(h) * dh, dh);

      Eigen::MatrixXd dp = d_oh * vh.transpose();               // T x T
      dv.middleCols(static_cast<Eigen::Index>(h) * dh, dh) = p.transpose() * d_oh;

      Eigen::MatrixXd ds(t_len, t_len);
      for (Eigen::Index i = 0; i < t_len; ++i) {
        auto p_row = p.row(i).head(i + 1);
        auto dp_row = dp.row(i).head(i + 1);
        double dot = (p_row.array() * dp_row.array()).sum();
        ds.row(i).setZero();
        ds.row(i).head(i + 1) = (p_row.array() * (dp_row.array() - dot)).matrix();
      }
      dq.middleCols(static_cast<Eigen::Index>(h) * dh, dh) = (ds * kh) * att_scale;
      dk.middleCols(static_cast<Eigen::Index>(h) * dh, dh) = (ds.transpose() * qh) * att_scale;
    }

    gb.wq += dq.transpose() * bc.ln1_out;
    gb.bq += dq.colwise().sum().transpose();
    gb.wk += dk.transpose() * bc.ln1_out;
    gb.bk += dk.colwise().sum().transpose();
    gb.wv += dv.transpose() * bc.ln1_out;
    gb.bv += dv.colwise().sum().transpose();

    Eigen::MatrixXd d_ln1_out = dq * blk.wq + dk * blk.wk + dv * blk.wv;
    dx = dx_mid + layer_norm_backward(d_ln1_out, bc.ln1_xhat, bc.ln1_inv, blk.ln1_scale,
                                      gb.ln1_scale, gb.ln1_shift);
  }

  for (Eigen::Index t = 0; t < t_len; ++t) {
    g.tok_emb.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    g.pos_emb.row(t) += dx.row(t);
  }
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  double m = logits.maxCoeff();
  double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

// Prefix-trie node over catalog SIDs; children sorted by code.
struct TrieNode {
  std::int32_t code = -1;
  std::vector<int> children;    // indices into the node pool
  std::vector<int> catalog_rows;  // leaves: rows in the SidTable with this SID
};

struct SidTrie {
  std::vector<TrieNode> nodes;  // nodes[0] is the root

  explicit SidTrie(const SidTable& catalog) {
    nodes.push_back(TrieNode{});
    for (std::size_t row = 0; row < catalog.size(); ++row) {
      int cur = 0;
      for (std::int32_t code : catalog.sids[row].codes) {
        int next = -1;
        for (int child : nodes[static_cast<std::size_t>(cur)].children) {
          if (nodes[static_cast<std::size_t>(child)].code == code) {
            next = child;
            break;
          }
        }
        if (next < 0) {
          next = static_cast<int>(nodes.size());
          nodes.push_back(TrieNode{code, {}, {}});
          auto& children = nodes[static_cast<std::size_t>(cur)].children;
          // Keep children ordered by code for a deterministic traversal.
          auto it = std::lower_bound(children.begin(), children.end(), next,
                                     [this](int a, int b) {
                                       return nodes[static_cast<std::size_t>(a)].code <
                                              nodes[static_cast<std::size_t>(b)].code;
                                     });
          children.insert(it, next);
        }
        cur = next;
      }
      nodes[static_cast<std::size_t>(cur)].catalog_rows.push_back(static_cast<int>(row));
    }
  }
};

}  // namespace

int TokenVocab::code_token(int position, int code) const {
  if (position < 0 || position >= n || code < 0 || code >= k) {
    throw DataError("code token out of range: position " + std::to_string(position) +
                    ", code " + std::to_string(code));
  }
  return 3 + position * k + code;
}

std::pair<int, int> TokenVocab::position_code(int token) const {
  if (!is_code(token)) {
    throw DataError("token " + std::to_string(token) + " is not a code token");
  }
  int offset = token - 3;
  return {offset / k, offset % k};
}

void RecConfig::validate() const {
  if (layers < 1) throw DataError("recommender needs layers >= 1");
  if (heads < 1) throw DataError("recommender needs heads >= 1");
  if (d_model < 1 || d_model % heads != 0) {
    throw DataError("d_model must be a positive multiple of heads");
  }
  if (max_len < 3) throw DataError("max_len must be >= 3");
  if (lr <= 0) throw DataError("recommender lr must be positive");
  if (batch_size < 1) throw DataError("recommender batch_size must be >= 1");
  if (epochs < 0) throw DataError("recommender epochs must be >= 0");
  if (init_std <= 0) throw DataError("init_std must be positive");
}

RecGradients make_zero_gradients(const RecModel& model) { return zero_gradients(model); }

RecModel init_recmodel(const TokenVocab& vocab, const RecConfig& cfg) {
  cfg.validate();
  RecModel m;
  m.cfg = cfg;
  m.vocab = vocab;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, cfg.init_std);
  auto fill = [&](Eigen::MatrixXd& w) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = gauss(rng);
      }
    }
  };

  m.tok_emb.resize(vocab.size(), cfg.d_model);
  fill(m.tok_emb);
  m.pos_emb.resize(cfg.max_len, cfg.d_model);
  fill(m.pos_emb);

  for (int l = 0; l < cfg.layers; ++l) {
    RecBlock b = zero_block(cfg.d_model, cfg.ff_dim());
    b.ln1_scale.setOnes();
    b.ln2_scale.setOnes();
    fill(b.wq);
    fill(b.wk);
    fill(b.wv);
    fill(b.wo);
    fill(b.w_ff1);
    fill(b.w_ff2);
    m.blocks.push_back(std::move(b));
  }

  m.lnf_scale = Eigen::VectorXd::Ones(cfg.d_model);
  m.lnf_shift = Eigen::VectorXd::Zero(cfg.d_model);
  if (cfg.tie_output) {
    m.w_out.resize(0, 0);
  } else {
    m.w_out.resize(vocab.size(), cfg.d_model);
    fill(m.w_out);
  }
  m.b_out = Eigen::VectorXd::Zero(vocab.size());
  return m;
}

Eigen::MatrixXd rec_forward_logits(const RecModel& model, const std::vector<int>& tokens) {
  return forward_cached(model, tokens, nullptr);
}

double rec_loss_and_grad(const RecModel& model, const std::vector<std::vector<int>>& batch,
                         RecGradients* grads) {
  double loss_sum = 0.0;
  std::size_t target_count = 0;
  for (const auto& seq : batch) {
    for (std::size_t t = 1; t < seq.size(); ++t) {
      target_count += seq[t] != TokenVocab::kPad;
    }
  }
  if (target_count == 0) {
    throw DataError("recommender batch contains no prediction targets");
  }
  const double inv_targets = 1.0 / static_cast<double>(target_count);

  for (const auto& seq : batch) {
    if (seq.size() < 2) {
      continue;
    }
    ForwardCache cache;
    Eigen::MatrixXd logits = forward_cached(model, seq, grads ? &cache : nullptr);
    if (!grads) {
      // Loss only.
      for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        int target = seq[t + 1];
        if (target == TokenVocab::kPad) continue;
        Eigen::VectorXd lp = log_softmax(logits.row(static_cast<Eigen::Index>(t)).transpose());
        loss_sum -= lp[target];
      }
      continue;
    }

    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      int target = seq[t + 1];
      if (target == TokenVocab::kPad) continue;
      Eigen::VectorXd lp = log_softmax(logits.row(static_cast<Eigen::Index>(t)).transpose());
      loss_sum -= lp[target];
      Eigen::VectorXd probs = lp.array().exp().matrix();
      dlogits.row(static_cast<Eigen::Index>(t)) += (probs * inv_targets).transpose();
      dlogits(static_cast<Eigen::Index>(t), target) -= inv_targets;
    }
    backward_sequence(model, seq, cache, dlogits, *grads);
  }
  return loss_sum * inv_targets;
}

std::vector<int> encode_playlist(const std::vector<TrackId>& tracks, const SidTable& sids,
                                 const TokenVocab& vocab, bool append_eos) {
  std::vector<int> tokens;
  tokens.reserve(1 + tracks.size() * static_cast<std::size_t>(vocab.n) + 1);
  tokens.push_back(TokenVocab::kBos);
  for (TrackId t : tracks) {
    const SemanticId& sid = sids.sid_for(t);  // throws on missing SID
    for (int pos = 0; pos < vocab.n; ++pos) {
      tokens.push_back(vocab.code_token(pos, sid.codes[static_cast<std::size_t>(pos)]));
    }
  }
  if (append_eos) {
    tokens.push_back(TokenVocab::kEos);
  }
  return tokens;
}

std::vector<TrackId> decode_playlist(
    const std::vector<int>& tokens, const TokenVocab& vocab,
    const std::unordered_map<SemanticId, TrackId, SemanticIdHash>& sid_to_track) {
  std::vector<TrackId> out;
  std::size_t i = 0;
  if (i < tokens.size() && tokens[i] == TokenVocab::kBos) {
    ++i;
  }
  while (i < tokens.size() && tokens[i] != TokenVocab::kEos) {
    SemanticId sid;
    sid.codes.resize(static_cast<std::size_t>(vocab.n));
    for (int pos = 0; pos < vocab.n; ++pos, ++i) {
      if (i >= tokens.size()) {
        throw DataError("truncated token group while decoding");
      }
      auto [p, code] = vocab.position_code(tokens[i]);
      if (p != pos) {
        throw DataError("token at offset " + std::to_string(i) + " belongs to position " +
                        std::to_string(p) + ", expected " + std::to_string(pos));
      }
      sid.codes[static_cast<std::size_t>(pos)] = code;
    }
    auto it = sid_to_track.find(sid);
    if (it == sid_to_track.end()) {
      throw DataError("decoded semantic id does not correspond to any track");
    }
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::vector<int>> make_training_windows(const std::vector<Playlist>& playlists,
                                                    const SidTable& sids,
                                                    const TokenVocab& vocab, int max_len) {
  const int tracks_per_window = (max_len - 2) / vocab.n;
  if (tracks_per_window < 1) {
    throw DataError("max_len " + std::to_string(max_len) +
                    " cannot hold a single track group of n=" + std::to_string(vocab.n));
  }
  const std::size_t stride = static_cast<std::size_t>(std::max(1, tracks_per_window / 2));

  std::vector<std::vector<int>> windows;
  for (const auto& pl : playlists) {
    if (pl.tracks.empty()) {
      continue;
    }
    const std::size_t total = pl.tracks.size();
    if (total <= static_cast<std::size_t>(tracks_per_window)) {
      windows.push_back(encode_playlist(pl.tracks, sids, vocab, /*append_eos=*/true));
      continue;
    }
    std::size_t start = 0;
    while (true) {
      std::size_t stop = std::min(start + static_cast<std::size_t>(tracks_per_window), total);
      std::vector<TrackId> chunk(pl.tracks.begin() + static_cast<std::ptrdiff_t>(start),
                                 pl.tracks.begin() + static_cast<std::ptrdiff_t>(stop));
      windows.push_back(encode_playlist(chunk, sids, vocab, /*append_eos=*/stop == total));
      if (stop == total) {
        break;
      }
      start += stride;
    }
  }
  return windows;
}

TrainedRec train_recmodel(const std::vector<Playlist>& train_playlists, const SidTable& sids,
                          const TokenVocab& vocab, const RecConfig& cfg) {
  cfg.validate();
  auto windows = make_training_windows(train_playlists, sids, vocab, cfg.max_len);
  if (windows.empty()) {
    throw DataError("recommender training set is empty");
  }

  TrainedRec result;
  result.model = init_recmodel(vocab, cfg);
  RecModel& model = result.model;

  RecGradients adam_m = zero_gradients(model);
  RecGradients adam_v = zero_gradients(model);
  long adam_t = 0;

  std::mt19937_64 rng(derive_seed(cfg.seed, "rec-batches"));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(windows.begin(), windows.end(), rng);

    double epoch_loss = 0.0;
    std::size_t epoch_targets = 0;
    for (std::size_t start = 0; start < windows.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(start + static_cast<std::size_t>(cfg.batch_size),
                                  windows.size());
      std::vector<std::vector<int>> batch(windows.begin() + static_cast<std::ptrdiff_t>(start),
                                          windows.begin() + static_cast<std::ptrdiff_t>(stop));

      RecGradients grads = zero_gradients(model);
      double loss = rec_loss_and_grad(model, batch, &grads);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite recommender loss at epoch " + std::to_string(epoch));
      }
      std::size_t batch_targets = 0;
      for (const auto& seq : batch) {
        for (std::size_t t = 1; t < seq.size(); ++t) {
          batch_targets += seq[t] != TokenVocab::kPad;
        }
      }
      epoch_loss += loss * static_cast<double>(batch_targets);
      epoch_targets += batch_targets;

      if (cfg.optimizer == Optimizer::sgd) {
        for_each_rec_param(model, grads,
                           [&](auto& param, auto& grad) { param -= cfg.lr * grad; });
      } else {
        ++adam_t;
        const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
        double bias1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
        double bias2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
        // Walk the three gradient structures in lockstep.
        auto step = [&](auto& param, auto& grad, auto& m_st, auto& v_st) {
          m_st = beta1 * m_st + (1.0 - beta1) * grad;
          v_st = (beta2 * v_st.array() + (1.0 - beta2) * grad.array().square()).matrix();
          param.array() -=
              cfg.lr * (m_st.array() / bias1) / ((v_st.array() / bias2).sqrt() + adam_eps);
        };
        step(model.tok_emb, grads.tok_emb, adam_m.tok_emb, adam_v.tok_emb);
        step(model.pos_emb, grads.pos_emb, adam_m.pos_emb, adam_v.pos_emb);
        for (std::size_t l = 0; l < model.blocks.size(); ++l) {
          auto& mb = model.blocks[l];
          auto& gb = grads.blocks[l];
          auto& ab = adam_m.blocks[l];
          auto& vb = adam_v.blocks[l];
          step(mb.ln1_scale, gb.ln1_scale, ab.ln1_scale, vb.ln1_scale);
          step(mb.ln1_shift, gb.ln1_shift, ab.ln1_shift, vb.ln1_shift);
          step(mb.wq, gb.wq, ab.wq, vb.wq);
          step(mb.bq, gb.bq, ab.bq, vb.bq);
          step(mb.wk, gb.wk, ab.wk, vb.wk);
          step(mb.bk, gb.bk, ab.bk, vb.bk);
          step(mb.wv, gb.wv, ab.wv, vb.wv);
          step(mb.bv, gb.bv, ab.bv, vb.bv);
          step(mb.wo, gb.wo, ab.wo, vb.wo);
          step(mb.bo, gb.bo, ab.bo, vb.bo);
          step(mb.ln2_scale, gb.ln2_scale, ab.ln2_scale, vb.ln2_scale);
          step(mb.ln2_shift, gb.ln2_shift, ab.ln2_shift, vb.ln2_shift);
          step(mb.w_ff1, gb.w_ff1, ab.w_ff1, vb.w_ff1);
          step(mb.b_ff1, gb.b_ff1, ab.b_ff1, vb.b_ff1);
          step(mb.w_ff2, gb.w_ff2, ab.w_ff2, vb.w_ff2);
          step(mb.b_ff2, gb.b_ff2, ab.b_ff2, vb.b_ff2);
        }
        step(model.lnf_scale, grads.lnf_scale, adam_m.lnf_scale, adam_v.lnf_scale);
        step(model.lnf_shift, grads.lnf_shift, adam_m.lnf_shift, adam_v.lnf_shift);
        if (!model.cfg.tie_output) {
          step(model.w_out, grads.w_out, adam_m.w_out, adam_v.w_out);
        }
        step(model.b_out, grads.b_out, adam_m.b_out, adam_v.b_out);
      }
    }
    result.epoch_loss.push_back(epoch_targets
                                    ? epoch_loss / static_cast<double>(epoch_targets)
                                    : 0.0);
  }
  return result;
}

RecScorer::RecScorer(const RecModel& model) : model_(model) {
  k_cache_.resize(model.blocks.size());
  v_cache_.resize(model.blocks.size());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    k_cache_[l].resize(model.cfg.max_len, model.cfg.d_model);
    v_cache_[l].resize(model.cfg.max_len, model.cfg.d_model);
  }
}

void RecScorer::truncate(int len) {
  if (len < 0 || len > length_) {
    throw DataError("scorer truncate to invalid length " + std::to_string(len));
  }
  length_ = len;
}

Eigen::VectorXd RecScorer::step_logprobs(int token) {
  const RecModel& m = model_;
  if (length_ >= m.cfg.max_len) {
    throw DataError("scorer context exceeded max_len " + std::to_string(m.cfg.max_len));
  }
  if (token < 0 || token >= m.vocab.size()) {
    throw DataError("token id " + std::to_string(token) + " outside the vocabulary");
  }
  const int d_model = m.cfg.d_model;
  const int heads = m.cfg.heads;
  const int dh = d_model / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int t = length_;

  Eigen::VectorXd x = (m.tok_emb.row(token) + m.pos_emb.row(t)).transpose();

  auto ln_vec = [](const Eigen::VectorXd& v, const Eigen::VectorXd& scale,
                   const Eigen::VectorXd& shift) {
    constexpr double kEps = 1e-5;
    double mu = v.mean();
    double var = (v.array() - mu).square().sum() / static_cast<double>(v.size());
    double inv = 1.0 / std::sqrt(var + kEps);
    return (((v.array() - mu) * inv) * scale.array() + shift.array()).matrix().eval();
  };

  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const RecBlock& blk = m.blocks[l];
    Eigen::VectorXd ln1 = ln_vec(x, blk.ln1_scale, blk.ln1_shift);

    Eigen::VectorXd q = blk.wq * ln1 + blk.bq;
    Eigen::VectorXd k = blk.wk * ln1 + blk.bk;
    Eigen::VectorXd v = blk.wv * ln1 + blk.bv;
    k_cache_[l].row(t) = k.transpose();
    v_cache_[l].row(t) = v.transpose();

    Eigen::VectorXd concat(d_model);
    for (int h = 0; h < heads; ++h) {
      auto kh = k_cache_[l].middleCols(static_cast<Eigen::Index>(h) * dh, dh).topRows(t + 1);
      auto vh = v_cache_[l].middleCols(static_cast<Eigen::Index>(h) * dh, dh).topRows(t + 1);
      Eigen::VectorXd qh = q.segment(static_cast<Eigen::Index>(h) * dh, dh);

      Eigen::VectorXd scores = (kh * qh) * att_scale;
      double mx = scores.maxCoeff();
      Eigen::VectorXd e = (scores.array() - mx).exp();
      Eigen::VectorXd p = e / e.sum();
      concat.segment(static_cast<Eigen::Index>(h) * dh, dh) = vh.transpose() * p;
    }
    Eigen::VectorXd attn_out = blk.wo * concat + blk.bo;
    Eigen::VectorXd x_mid = x + attn_out;

    Eigen::VectorXd ln2 = ln_vec(x_mid, blk.ln2_scale, blk.ln2_shift);
    Eigen::VectorXd ff_pre = blk.w_ff1 * ln2 + blk.b_ff1;
    Eigen::VectorXd ff_act = ff_pre.unaryExpr([](double z) { return gelu(z); });
    x = x_mid + blk.w_ff2 * ff_act + blk.b_ff2;
  }

  Eigen::VectorXd h_final = ln_vec(x, m.lnf_scale, m.lnf_shift);
  const Eigen::MatrixXd& w_out = m.cfg.tie_output ? m.tok_emb : m.w_out;
  Eigen::VectorXd logits = w_out * h_final + m.b_out;
  ++length_;
  return log_softmax(logits);
}

std::vector<double> score_candidates_vec(const RecModel& model,
                                         const std::vector<int>& context_tokens,
                                         const SidTable& catalog) {
  if (catalog.size() == 0) {
    throw DataError("candidate catalog is empty");
  }
  if (context_tokens.empty()) {
    throw DataError("candidate scoring needs a non-empty context");
  }
  for (const auto& sid : catalog.sids) {
    if (sid.codes.size() != static_cast<std::size_t>(model.vocab.n)) {
      throw DataError("catalog semantic id length does not match the vocabulary");
    }
  }
  const int needed = static_cast<int>(context_tokens.size()) + model.vocab.n;
  if (needed > model.cfg.max_len) {
    throw DataError("context of " + std::to_string(context_tokens.size()) +
                    " tokens plus a candidate exceeds max_len " +
                    std::to_string(model.cfg.max_len));
  }

  RecScorer scorer(model);
  Eigen::VectorXd logprobs;
  for (int tok : context_tokens) {
    logprobs = scorer.step_logprobs(tok);
  }

  SidTrie trie(catalog);
  std::vector<double> scores(catalog.size(), 0.0);

  // DFS; the cache is rewound to the node's depth before each sibling.
  struct Frame {
    int node;
    int depth;         // tokens consumed below the context
    double score_sum;  // log-prob accumulated along the path
  };
  std::vector<Frame> stack;
  std::vector<Eigen::VectorXd> level_logprobs(static_cast<std::size_t>(model.vocab.n) + 1);
  level_logprobs[0] = logprobs;

  const int context_len = static_cast<int>(context_tokens.size());
  for (auto it = trie.nodes[0].children.rbegin(); it != trie.nodes[0].children.rend(); ++it) {
    stack.push_back({*it, 0, 0.0});
  }
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    const TrieNode& node = trie.nodes[static_cast<std::size_t>(f.node)];
    int token = model.vocab.code_token(f.depth, node.code);
    double score = f.score_sum + level_logprobs[static_cast<std::size_t>(f.depth)][token];

    if (f.depth + 1 == model.vocab.n) {
      for (int row : node.catalog_rows) {
        scores[static_cast<std::size_t>(row)] = score;
      }
      continue;
    }
    scorer.truncate(context_len + f.depth);
    level_logprobs[static_cast<std::size_t>(f.depth) + 1] = scorer.step_logprobs(token);
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
      stack.push_back({*it, f.depth + 1, score});
    }
  }
  return scores;
}

std::unordered_map<TrackId, double> score_candidates(const RecModel& model,
                                                     const std::vector<int>& context_tokens,
                                                     const SidTable& catalog) {
  auto scores = score_candidates_vec(model, context_tokens, catalog);
  std::unordered_map<TrackId, double> out;
  out.reserve(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    out.emplace(catalog.ids[i], scores[i]);
  }
  return out;
}

std::vector<EvalInstance> make_eval_instances(const std::vector<Playlist>& test_playlists,
                                              int max_context_tracks) {
  std::vector<EvalInstance> instances;
  instances.reserve(test_playlists.size());
  for (const auto& pl : test_playlists) {
    if (pl.tracks.size() < 2) {
      throw DataError("test playlist " + std::to_string(pl.id) +
                      " is too short to form an evaluation instance");
    }
    const auto l = pl.tracks.size();
    const auto context_len =
        std::min(l - 1, static_cast<std::size_t>(max_context_tracks));
    EvalInstance inst;
    inst.context.assign(pl.tracks.begin(),
                        pl.tracks.begin() + static_cast<std::ptrdiff_t>(context_len));
    inst.target = pl.tracks[context_len];
    instances.push_back(std::move(inst));
  }
  return instances;
}

RecMetrics evaluate_with_ranks(
    const std::vector<EvalInstance>& instances,
    const std::function<int(std::size_t, const EvalInstance&)>& rank_fn,
    const std::vector<int>& ks) {
  if (instances.empty()) {
    throw DataError("evaluation needs at least one instance");
  }
  RecMetrics metrics;
  metrics.n_instances = instances.size();
  double mrr = 0.0;
  std::map<int, std::size_t> hits;
  for (int k : ks) {
    hits[k] = 0;
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    int rank = rank_fn(i, instances[i]);
    mrr += 1.0 / static_cast<double>(rank);
    for (int k : ks) {
      hits[k] += rank <= k;
    }
  }
  metrics.mrr_percent = 100.0 * mrr / static_cast<double>(instances.size());
  for (int k : ks) {
    metrics.recall_percent[k] =
        100.0 * static_cast<double>(hits[k]) / static_cast<double>(instances.size());
  }
  return metrics;
}

RecMetrics evaluate(const RecModel& model, const std::vector<EvalInstance>& instances,
                    const SidTable& catalog, const std::vector<int>& ks, int threads) {
  if (instances.empty()) {
    throw DataError("evaluation needs at least one instance");
  }
  const unsigned workers = threads > 0
                               ? static_cast<unsigned>(threads)
                               : std::max(1u, std::thread::hardware_concurrency());
  std::vector<int> ranks(instances.size(), 0);
  std::mutex error_mutex;
  std::exception_ptr first_error = nullptr;

  auto worker_fn = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < instances.size(); i += workers) {
        const EvalInstance& inst = instances[i];
        std::vector<int> context =
            encode_playlist(inst.context, catalog, model.vocab, /*append_eos=*/false);
        std::vector<double> scores = score_candidates_vec(model, context, catalog);

        auto target_row = catalog.row_of.find(inst.target);
        if (target_row == catalog.row_of.end()) {
          throw DataError("evaluation target " + std::to_string(inst.target) +
                          " missing from the catalog");
        }
        double target_score = scores[static_cast<std::size_t>(target_row->second)];
        int better = 0;
        for (std::size_t c = 0; c < scores.size(); ++c) {
          if (scores[c] > target_score ||
              (scores[c] == target_score && catalog.ids[c] < inst.target)) {
            ++better;
          }
        }
        ranks[i] = better + 1;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) {
        first_error = std::current_exception();
      }
    }
  };

  if (workers <= 1) {
    worker_fn(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back(worker_fn, w);
    }
    for (auto& t : pool) t.join();
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
  return evaluate_with_ranks(
      instances, [&](std::size_t i, const EvalInstance&) { return ranks[i]; }, ks);
}

PopularityRanker::PopularityRanker(const std::vector<Playlist>& train_playlists,
                                   const std::vector<TrackId>& catalog_ids) {
  std::unordered_map<TrackId, std::uint32_t> freq;
  std::vector<TrackId> distinct;
  for (const auto& pl : train_playlists) {
    distinct.assign(pl.tracks.begin(), pl.tracks.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (TrackId t : distinct) {
      ++freq[t];
    }
  }
  std::vector<TrackId> order = catalog_ids;
  std::sort(order.begin(), order.end(), [&](TrackId a, TrackId b) {
    std::uint32_t fa = freq.count(a) ? freq[a] : 0;
    std::uint32_t fb = freq.count(b) ? freq[b] : 0;
    if (fa != fb) return fa > fb;
    return a < b;
  });
  for (std::size_t i = 0; i < order.size(); ++i) {
    rank_[order[i]] = static_cast<int>(i) + 1;
  }
}

int PopularityRanker::rank_of(TrackId target) const {
  auto it = rank_.find(target);
  if (it == rank_.end()) {
    throw DataError("popularity ranker has no entry for track " + std::to_string(target));
  }
  return it->second;
}

RandomRanker::RandomRanker(std::vector<TrackId> catalog_ids, std::uint64_t seed)
    : ids_(std::move(catalog_ids)), seed_(seed) {
  std::sort(ids_.begin(), ids_.end());
}

int RandomRanker::rank_of(std::size_t instance_index, TrackId target) const {
  std::mt19937_64 rng(derive_seed(seed_, "random-rank-" + std::to_string(instance_index)));
  std::vector<TrackId> order = ids_;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == target) {
      return static_cast<int>(i) + 1;
    }
  }
  throw DataError("random ranker has no entry for track " + std::to_string(target));
}

nlohmann::json metrics_to_json(const RecMetrics& metrics) {
  nlohmann::json j;
  j["mrr"] = metrics.mrr_percent;
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : metrics.recall_percent) {
    recall[std::to_string(k)] = v;
  }
  j["recall"] = recall;
  j["n_instances"] = metrics.n_instances;
  return j;
}

void save_recmodel(const RecModel& model, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "FREC");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(model.cfg.layers));
  io::write_u32(os, static_cast<std::uint32_t>(model.cfg.heads));
  io::write_u32(os, static_cast<std::uint32_t>(model.cfg.d_model));
  io::write_u32(os, static_cast<std::uint32_t>(model.cfg.ff_dim()));
  io::write_u32(os, static_cast<std::uint32_t>(model.cfg.max_len));
  io::write_u32(os, static_cast<std::uint32_t>(model.vocab.n));
  io::write_u32(os, static_cast<std::uint32_t>(model.vocab.k));
  io::write_u32(os, model.cfg.tie_output ? 1 : 0);

  auto write_matrix = [&os](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        io::write_f64(os, m(r, c));
      }
    }
  };
  auto write_vector = [&os](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      io::write_f64(os, v[i]);
    }
  };

  write_matrix(model.tok_emb);
  write_matrix(model.pos_emb);
  for (const auto& b : model.blocks) {
    write_vector(b.ln1_scale);
    write_vector(b.ln1_shift);
    write_matrix(b.wq);
    write_vector(b.bq);
    write_matrix(b.wk);
    write_vector(b.bk);
    write_matrix(b.wv);
    write_vector(b.bv);
    write_matrix(b.wo);
    write_vector(b.bo);
    write_vector(b.ln2_scale);
    write_vector(b.ln2_shift);
    write_matrix(b.w_ff1);
    write_vector(b.b_ff1);
    write_matrix(b.w_ff2);
    write_vector(b.b_ff2);
  }
  write_vector(model.lnf_scale);
  write_vector(model.lnf_shift);
  if (!model.cfg.tie_output) {
    write_matrix(model.w_out);
  }
  write_vector(model.b_out);
}

RecModel load_recmodel(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "FREC", path);
  std::uint32_t version = io::read_u32(is, path + " version");
  if (version != 1) {
    throw DataError(path + ": unsupported FREC version " + std::to_string(version));
  }
  RecConfig cfg;
  cfg.layers = static_cast<int>(io::read_u32(is, path + " layers"));
  cfg.heads = static_cast<int>(io::read_u32(is, path + " heads"));
  cfg.d_model = static_cast<int>(io::read_u32(is, path + " d_model"));
  cfg.d_ff = static_cast<int>(io::read_u32(is, path + " d_ff"));
  cfg.max_len = static_cast<int>(io::read_u32(is, path + " max_len"));
  TokenVocab vocab;
  vocab.n = static_cast<int>(io::read_u32(is, path + " n"));
  vocab.k = static_cast<int>(io::read_u32(is, path + " K"));
  cfg.tie_output = io::read_u32(is, path + " tie_output") != 0;

  RecModel m = init_recmodel(vocab, cfg);

  auto read_matrix = [&is, &path](Eigen::MatrixXd& out) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        out(r, c) = io::read_f64(is, path + " parameters");
      }
    }
  };
  auto read_vector = [&is, &path](Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out[i] = io::read_f64(is, path + " parameters");
    }
  };

  read_matrix(m.tok_emb);
  read_matrix(m.pos_emb);
  for (auto& b : m.blocks) {
    read_vector(b.ln1_scale);
    read_vector(b.ln1_shift);
    read_matrix(b.wq);
    read_vector(b.bq);
    read_matrix(b.wk);
    read_vector(b.bk);
    read_matrix(b.wv);
    read_vector(b.bv);
    read_matrix(b.wo);
    read_vector(b.bo);
    read_vector(b.ln2_scale);
    read_vector(b.ln2_shift);
    read_matrix(b.w_ff1);
    read_vector(b.b_ff1);
    read_matrix(b.w_ff2);
    read_vector(b.b_ff2);
  }
  read_vector(m.lnf_scale);
  read_vector(m.lnf_shift);
  if (!m.cfg.tie_output) {
    read_matrix(m.w_out);
  }
  read_vector(m.b_out);
  return m;
}

}  // namespace fusid
