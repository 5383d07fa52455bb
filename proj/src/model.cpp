#include "mtnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/timeutil.hpp"

namespace mtnet::model {

// ---- building blocks -------------------------------------------------------

Var iac(Var x, std::span<const std::uint8_t> pad_mask, std::span<const IacLayerWeights> layers,
        const IacRuntime& rt) {
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  const bool padded = !pad_mask.empty();
  if (padded && pad_mask.size() != m)
    throw ShapeError("iac: pad mask of length " + std::to_string(pad_mask.size()) + " for " +
                     std::to_string(m) + " rows");
  if (m == 0 || (padded && std::all_of(pad_mask.begin(), pad_mask.end(), [](auto v) { return v != 0; })))
    throw DataError("iac: every row of the group is masked");

  std::vector<std::uint8_t> key_mask, row_mask;
  if (padded) {
    key_mask.resize(m * m);
    row_mask.resize(m * d);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) key_mask[i * m + j] = pad_mask[j];
      std::fill_n(row_mask.begin() + i * d, d, pad_mask[i]);
    }
  }

  Var h = x;
  for (const auto& L : layers) {
    const std::size_t heads = L.wq.size();
    if (heads == 0 || L.wk.size() != heads || L.wv.size() != heads)
      throw ShapeError("iac: inconsistent head weights");
    std::vector<Var> z(heads);
    for (std::size_t k = 0; k < heads; ++k) {
      const Var q = ad::matmul(h, L.wq[k]);
      const Var key = ad::matmul(h, L.wk[k]);
      const Var v = ad::matmul(h, L.wv[k]);
      const Real inv_scale = Real{1} / std::sqrt(static_cast<Real>(q.cols()));
      Var s = ad::scale(ad::matmul(q, ad::transpose(key)), inv_scale);
      if (padded) s = ad::masked_fill(s, key_mask, -std::numeric_limits<Real>::infinity());
      const Var alpha = ad::softmax_rows(s);
      if (rt.trace) rt.trace->alpha.push_back(alpha.to_tensor());
      z[k] = ad::matmul(alpha, v);
    }
    const Var zc = heads == 1 ? z[0] : ad::concat_cols(z);
    const Var e1 = ad::layer_norm_rows(ad::add(h, zc), L.ln1_gain, L.ln1_bias);
    Var f = ad::relu(ad::add(ad::matmul(e1, L.ff_w1), L.ff_b1));
    if (rt.train && rt.dropout > 0) {
      if (!rt.rng) throw Error("iac: train-mode dropout needs a random generator");
      f = ad::dropout(f, static_cast<Real>(rt.dropout), *rt.rng, true);
    }
    f = ad::add(ad::matmul(f, L.ff_w2), L.ff_b2);
    h = ad::layer_norm_rows(ad::add(e1, f), L.ln2_gain, L.ln2_bias);
    if (padded) h = ad::masked_fill(h, row_mask, 0);
  }
  return h;
}

IrcState irc(Var e, std::span<const IrcChild> children, const IrcWeights& w) {
  const std::size_t n = w.fanout;
  const std::size_t hid = w.hidden;
  if (children.size() > n)
    throw ShapeError("irc: " + std::to_string(children.size()) + " children exceed fan-out " +
                     std::to_string(n));
  std::vector<IrcChild> kids(children.begin(), children.end());
  std::sort(kids.begin(), kids.end(),
            [](const IrcChild& a, const IrcChild& b) { return a.position < b.position; });
  for (std::size_t i = 0; i < kids.size(); ++i) {
    if (kids[i].position >= n)
      throw ShapeError("irc: child position " + std::to_string(kids[i].position) +
                       " outside fan-out " + std::to_string(n));
    if (i > 0 && kids[i].position == kids[i - 1].position)
      throw ShapeError("irc: child position " + std::to_string(kids[i].position) + " repeated");
  }

  Var pre_i = ad::add(ad::matmul(e, w.w_i), w.b_i);
  Var pre_o = ad::add(ad::matmul(e, w.w_o), w.b_o);
  Var pre_u = ad::add(ad::matmul(e, w.w_u), w.b_u);
  const Var pre_f = ad::add(ad::matmul(e, w.w_f), w.b_f);

  Var c_sum;  // sum over children of f_k * c_k
  if (!kids.empty()) {
    std::vector<Var> hs;
    for (const auto& k : kids) hs.push_back(k.h);
    const Var hsel = kids.size() == 1 ? hs[0] : ad::concat_cols(hs);
    // Rows of a child-indexed matrix belonging to the present children.
    const bool dense = kids.size() == n;  // positions are then exactly 0..n-1
    auto rows_of = [&](Var u) {
      if (dense) return u;
      std::vector<Var> blocks;
      for (const auto& k : kids) blocks.push_back(ad::slice_rows(u, k.position * hid, hid));
      return blocks.size() == 1 ? blocks[0] : ad::concat_rows(blocks);
    };
    pre_i = ad::add(pre_i, ad::matmul(hsel, rows_of(w.u_i)));
    pre_o = ad::add(pre_o, ad::matmul(hsel, rows_of(w.u_o)));
    pre_u = ad::add(pre_u, ad::matmul(hsel, rows_of(w.u_u)));
    const Var uf_rows = rows_of(w.u_f);
    Var f_all;
    if (dense) f_all = ad::matmul(hsel, uf_rows);
    for (const auto& k : kids) {
      const Var contrib = dense ? ad::slice_cols(f_all, k.position * hid, hid)
                                : ad::matmul(hsel, ad::slice_cols(uf_rows, k.position * hid, hid));
      const Var f = ad::sigmoid(ad::add(pre_f, contrib));
      const Var term = ad::mul(f, k.c);
      c_sum = c_sum.valid() ? ad::add(c_sum, term) : term;
    }
  }
  const Var i = ad::sigmoid(pre_i);
  const Var o = ad::sigmoid(pre_o);
  const Var u = ad::tanh(pre_u);
  Var c = ad::mul(i, u);
  if (c_sum.valid()) c = ad::add(c, c_sum);
  return {ad::mul(o, ad::tanh(c)), c};
}

Var init_checkin_node(Var e_user, Var e_poi, Var e_cat, Var e_geo, Var hour_row, double gamma) {
  const Var cat = ad::concat_cols({e_user, e_poi, e_cat, e_geo});
  if (gamma == 0) return cat;
  return ad::add(cat, gamma == 1 ? hour_row : ad::scale(hour_row, static_cast<Real>(gamma)));
}

Var recommend_scores(Var day, Var period, Var checkin, double eta, double delta) {
  auto weighted = [](Var v, double w) { return w == 1 ? v : ad::scale(v, static_cast<Real>(w)); };
  Var out;
  if (eta != 0 && day.valid()) out = weighted(day, eta);
  if (delta != 0 && period.valid()) {
    const Var p = weighted(period, delta);
    out = out.valid() ? ad::add(out, p) : p;
  }
  return out.valid() ? ad::add(out, checkin) : checkin;
}

Var multitask_loss(std::span<const Var> task_losses, std::span<const Var> log_sigmas, bool plain) {
  Var weighted, reg;
  for (std::size_t t = 0; t < task_losses.size(); ++t) {
    const Var L = task_losses[t];
    if (!L.valid()) continue;
    Var term = L;
    if (!plain) {
      const Var s = log_sigmas[t];
      term = ad::scale(ad::mul(ad::exp(ad::scale(s, Real{-2})), L), Real{0.5});
      reg = reg.valid() ? ad::add(reg, s) : s;
    }
    weighted = weighted.valid() ? ad::add(weighted, term) : term;
  }
  if (!weighted.valid()) throw Error("multitask_loss: no task losses");
  return reg.valid() ? ad::add(weighted, reg) : weighted;
}

std::vector<int> random_derangement(int slots, std::uint64_t seed) {
  std::vector<int> p(static_cast<std::size_t>(slots));
  std::iota(p.begin(), p.end(), 0);
  if (slots < 2) return p;
  ad::Rng rng(seed);
  while (true) {
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (int i = 0; i < slots; ++i) fixed = fixed || p[i] == i;
    if (!fixed) return p;
  }
}

// ---- Pass -----------------------------------------------------------------

Pass::Pass(const MTNet& net, ad::Tape& tape, ad::GradBuffers* sink)
    : net_(net), tape_(tape), sink_(sink), bound_(net.params().size()) {}

Var Pass::param(ParamId id) {
  Var& v = bound_.at(id);
  if (!v.valid()) {
    const auto& t = net_.params()[id];
    v = tape_.param(t, sink_ ? (*sink_)[id] : std::span<Real>{});
  }
  return v;
}

Var Pass::param(const std::string& name) { return param(net_.params().id(name)); }

// ---- MTNet ----------------------------------------------------------------

void MTNet::add_matrix(const std::string& name, std::size_t rows, std::size_t cols, ad::Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = static_cast<Real>(u(rng));
  params_.add(name, std::move(t));
}

void MTNet::add_bias(const std::string& name, std::size_t cols, Real value) {
  params_.add(name, Tensor(1, cols, value));
}

void MTNet::add_embedding(const std::string& name, std::size_t rows, std::size_t cols, ad::Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = static_cast<Real>(n(rng));
  params_.add(name, std::move(t));
}

void MTNet::add_iac_stack(const std::string& stack, std::size_t width, ad::Rng& rng) {
  const std::size_t dh = width / config_.heads;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "iac." + stack + ".l" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string ph = p + "h" + std::to_string(h) + ".";
      add_matrix(ph + "Wq", width, dh, rng);
      add_matrix(ph + "Wk", width, dh, rng);
      add_matrix(ph + "Wv", width, dh, rng);
    }
    add_bias(p + "ln1.gain", width, 1);
    add_bias(p + "ln1.bias", width);
    add_matrix(p + "ff.W1", width, config_.ff_dim, rng);
    add_bias(p + "ff.b1", config_.ff_dim);
    add_matrix(p + "ff.W2", config_.ff_dim, width, rng);
    add_bias(p + "ff.b2", width);
    add_bias(p + "ln2.gain", width, 1);
    add_bias(p + "ln2.bias", width);
  }
}

void MTNet::add_irc(const std::string& level, std::size_t in, std::size_t fanout, ad::Rng& rng) {
  const std::size_t hid = config_.hidden;
  const std::string p = "irc." + level + ".";
  for (const char* g : {"i", "f", "o", "u"}) add_matrix(p + "W_" + g, in, hid, rng);
  for (const char* g : {"i", "o", "u"}) add_matrix(p + "U_" + g, fanout * hid, hid, rng);
  add_matrix(p + "U_f", fanout * hid, fanout * hid, rng);
  for (const char* g : {"i", "f", "o", "u"}) add_bias(p + "b_" + g, hid);
}

MTNet::MTNet(ModelConfig config, VocabSizes vocab, std::size_t dataset_max_leaves,
             std::uint64_t seed)
    : config_(std::move(config)), vocab_(vocab) {
  if (config_.leaf_fanout == 0) config_.leaf_fanout = std::max<std::size_t>(1, dataset_max_leaves);
  config_.validate();
  if (vocab_.users == 0 || vocab_.pois == 0 || vocab_.categories == 0 || vocab_.geo == 0)
    throw DataError("model: every vocabulary must be non-empty");

  const auto& ab = config_.ablations;
  const std::size_t D = config_.embed_dim();
  const std::size_t hid = config_.hidden;
  ad::Rng rng(mix_seed(seed, 0x1417));

  add_embedding("emb.user", vocab_.users, config_.d_user, rng);
  add_embedding("emb.poi", vocab_.pois, config_.d_poi, rng);
  add_embedding("emb.cat", vocab_.categories, config_.d_cat, rng);
  add_embedding("emb.geo", vocab_.geo, config_.d_geo, rng);
  add_embedding("emb.hour", 24, D, rng);
  if (!ab.no_irc) {
    add_embedding("emb.period_slot", static_cast<std::size_t>(config_.slots_per_day), D, rng);
    add_embedding("emb.dow", 7, D, rng);
    if (config_.root == RootMode::SuperRoot) add_embedding("emb.root", 1, D, rng);
  }
  if (!ab.no_iac) {
    add_iac_stack("leaf", D, rng);
    add_iac_stack("period", hid, rng);
  }
  if (!ab.no_irc) {
    add_irc("period", D, config_.leaf_fanout, rng);
    add_irc("day", D, static_cast<std::size_t>(config_.slots_per_day), rng);
    if (config_.root == RootMode::SuperRoot) add_irc("root", D, config_.max_days, rng);
  } else {
    add_matrix("pool.period.W", D, hid, rng);
    add_bias("pool.period.b", hid);
    add_matrix("pool.day.W", hid, hid, rng);
    add_bias("pool.day.b", hid);
    if (config_.root == RootMode::SuperRoot) {
      add_matrix("pool.root.W", hid, hid, rng);
      add_bias("pool.root.b", hid);
    }
  }
  add_matrix("head.day.W", hid, vocab_.pois, rng);
  add_bias("head.day.b", vocab_.pois);
  if (!ab.no_aux_node_preds) {
    add_matrix("head.period.W", hid, vocab_.pois, rng);
    add_bias("head.period.b", vocab_.pois);
  }
  add_matrix("head.checkin.W", D, vocab_.pois, rng);
  add_bias("head.checkin.b", vocab_.pois);
  if (!ab.no_geo_head) {
    add_matrix("head.geo.W", hid, vocab_.geo, rng);
    add_bias("head.geo.b", vocab_.geo);
  }
  if (!ab.no_cat_head) {
    add_matrix("head.cat.W", hid, vocab_.categories, rng);
    add_bias("head.cat.b", vocab_.categories);
  }
  if (!ab.no_multitask) {
    add_bias("loss.log_sigma_poi", 1);
    if (!ab.no_geo_head) add_bias("loss.log_sigma_geo", 1);
    if (!ab.no_cat_head) add_bias("loss.log_sigma_cat", 1);
  }
}

int MTNet::slot_of(const Pass& pass, int slot) const {
  return pass.slot_perm.empty() ? slot : pass.slot_perm.at(static_cast<std::size_t>(slot));
}

int MTNet::hour_of(const Pass& pass, std::int64_t timestamp) const {
  const int h = hour_of_day(timestamp, config_.tz_offset_seconds);
  if (pass.slot_perm.empty()) return h;
  const int w = 24 / config_.slots_per_day;
  return slot_of(pass, h / w) * w + h % w;
}

Var MTNet::checkin_node(Pass& pass, const CheckIn& c) const {
  const auto row = [&](const char* table, std::size_t idx) {
    const std::size_t i[1] = {idx};
    return ad::gather_rows(pass.param(table), i);
  };
  const Var e = init_checkin_node(row("emb.user", c.user_id), row("emb.poi", c.poi_id),
                                  row("emb.cat", c.category_id), row("emb.geo", c.geo_cluster_id),
                                  row("emb.hour", static_cast<std::size_t>(hour_of(pass, c.timestamp))),
                                  config_.gamma);
  if (!pass.train || config_.dropout_embed == 0) return e;
  if (!pass.rng) throw Error("train-mode forward needs a random generator");
  return ad::dropout(e, static_cast<Real>(config_.dropout_embed), *pass.rng, true);
}

std::vector<IacLayerWeights> MTNet::iac_weights(Pass& pass, const std::string& stack) const {
  std::vector<IacLayerWeights> out(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "iac." + stack + ".l" + std::to_string(l) + ".";
    auto& w = out[l];
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string ph = p + "h" + std::to_string(h) + ".";
      w.wq.push_back(pass.param(ph + "Wq"));
      w.wk.push_back(pass.param(ph + "Wk"));
      w.wv.push_back(pass.param(ph + "Wv"));
    }
    w.ln1_gain = pass.param(p + "ln1.gain");
    w.ln1_bias = pass.param(p + "ln1.bias");
    w.ff_w1 = pass.param(p + "ff.W1");
    w.ff_b1 = pass.param(p + "ff.b1");
    w.ff_w2 = pass.param(p + "ff.W2");
    w.ff_b2 = pass.param(p + "ff.b2");
    w.ln2_gain = pass.param(p + "ln2.gain");
    w.ln2_bias = pass.param(p + "ln2.bias");
  }
  return out;
}

IrcWeights MTNet::irc_weights(Pass& pass, const std::string& level) const {
  const std::string p = "irc." + level + ".";
  IrcWeights w;
  w.w_i = pass.param(p + "W_i");
  w.w_f = pass.param(p + "W_f");
  w.w_o = pass.param(p + "W_o");
  w.w_u = pass.param(p + "W_u");
  w.u_i = pass.param(p + "U_i");
  w.u_f = pass.param(p + "U_f");
  w.u_o = pass.param(p + "U_o");
  w.u_u = pass.param(p + "U_u");
  w.b_i = pass.param(p + "b_i");
  w.b_f = pass.param(p + "b_f");
  w.b_o = pass.param(p + "b_o");
  w.b_u = pass.param(p + "b_u");
  w.hidden = config_.hidden;
  w.fanout = w.u_i.rows() / config_.hidden;
  return w;
}

Var MTNet::pooled(Pass& pass, const std::string& level, std::span<const Var> children) const {
  Var acc = children[0];
  for (std::size_t i = 1; i < children.size(); ++i) acc = ad::add(acc, children[i]);
  if (children.size() > 1) acc = ad::scale(acc, Real{1} / static_cast<Real>(children.size()));
  return ad::add(ad::matmul(acc, pass.param("pool." + level + ".W")),
                 pass.param("pool." + level + ".b"));
}

Var MTNet::head(Pass& pass, const std::string& name, Var x) const {
  return ad::add(ad::matmul(x, pass.param("head." + name + ".W")), pass.param("head." + name + ".b"));
}

ForwardResult MTNet::forward(Pass& pass, const tree::MobilityTree& tree) const {
  if (tree.slots_per_day != config_.slots_per_day)
    throw ConfigError("model.slots_per_day", "tree built with P = " +
                                                 std::to_string(tree.slots_per_day) +
                                                 " but the model uses P = " +
                                                 std::to_string(config_.slots_per_day));
  if (!pass.slot_perm.empty() &&
      pass.slot_perm.size() != static_cast<std::size_t>(config_.slots_per_day))
    throw ShapeError("forward: slot permutation length differs from slots_per_day");
  const auto& ab = config_.ablations;
  ForwardResult res;
  NodeStates& st = res.states;
  const std::size_t n = tree.checkins.size();
  st.leaf_embed.resize(n);
  st.leaf_out.resize(n);

  std::vector<IacLayerWeights> leaf_iac, period_iac;
  IrcWeights irc_p, irc_d;
  if (!ab.no_iac) {
    leaf_iac = iac_weights(pass, "leaf");
    period_iac = iac_weights(pass, "period");
  }
  if (!ab.no_irc) {
    irc_p = irc_weights(pass, "period");
    irc_d = irc_weights(pass, "day");
  }
  const IacRuntime rt{config_.dropout_param, pass.train, pass.rng, pass.trace};
  const auto run_iac = [&](std::span<const Var> rows, const std::vector<IacLayerWeights>& w) {
    if (ab.no_iac) return std::vector<Var>(rows.begin(), rows.end());
    const Var x = rows.size() == 1 ? rows[0] : ad::concat_rows(rows);
    const Var y = iac(x, {}, w, rt);
    std::vector<Var> out;
    for (std::size_t r = 0; r < rows.size(); ++r)
      out.push_back(rows.size() == 1 ? y : ad::slice_rows(y, r, 1));
    return out;
  };
  const auto embed_row = [&](const char* table, std::size_t idx) {
    const std::size_t i[1] = {idx};
    return ad::gather_rows(pass.param(table), i);
  };

  st.period_h.resize(tree.days.size());
  st.period_c.resize(tree.days.size());
  st.period_out.resize(tree.days.size());
  st.day_h.resize(tree.days.size());
  st.day_c.resize(tree.days.size());
  for (std::size_t d = 0; d < tree.days.size(); ++d) {
    const auto& day = tree.days[d];
    for (const auto& period : day.periods) {
      // Keep the newest leaves when the group exceeds the fan-out.
      std::size_t first = 0;
      if (period.leaves.size() > config_.leaf_fanout) {
        first = period.leaves.size() - config_.leaf_fanout;
        res.truncated_leaves += first;
      }
      std::vector<Var> rows;
      for (std::size_t l = first; l < period.leaves.size(); ++l) {
        const std::size_t pos = period.leaves[l];
        st.leaf_embed[pos] = checkin_node(pass, tree.leaf(pos));
        rows.push_back(st.leaf_embed[pos]);
      }
      const auto outs = run_iac(rows, leaf_iac);  // Step 1
      for (std::size_t l = first; l < period.leaves.size(); ++l)
        st.leaf_out[period.leaves[l]] = outs[l - first];

      // Step 2
      if (ab.no_irc) {
        st.period_h[d].push_back(pooled(pass, "period", outs));
        st.period_c[d].push_back(Var{});
      } else {
        std::vector<IrcChild> kids;
        for (std::size_t l = 0; l < outs.size(); ++l) {
          const IrcState leaf = irc(outs[l], {}, irc_p);
          kids.push_back({l, leaf.h, leaf.c});
        }
        const Var input = embed_row("emb.period_slot",
                                    static_cast<std::size_t>(slot_of(pass, period.slot_index)));
        const IrcState s = irc(input, kids, irc_p);
        st.period_h[d].push_back(s.h);
        st.period_c[d].push_back(s.c);
      }
    }
    st.period_out[d] = run_iac(st.period_h[d], period_iac);  // Step 3

    // Step 4
    if (ab.no_irc) {
      st.day_h[d] = pooled(pass, "day", st.period_out[d]);
    } else {
      std::vector<IrcChild> kids;
      for (std::size_t p = 0; p < day.periods.size(); ++p)
        kids.push_back({static_cast<std::size_t>(slot_of(pass, day.periods[p].slot_index)),
                        st.period_out[d][p], st.period_c[d][p]});
      const IrcState s =
          irc(embed_row("emb.dow", static_cast<std::size_t>(day.day_of_week)), kids, irc_d);
      st.day_h[d] = s.h;
      st.day_c[d] = s.c;
    }
  }

  if (config_.root == RootMode::CurrentDay) {
    st.root = st.day_h[tree.current.day];
  } else {
    // The newest max_days days, oldest first.
    const std::size_t nd = tree.days.size();
    const std::size_t first = nd > config_.max_days ? nd - config_.max_days : 0;
    if (ab.no_irc) {
      st.root = pooled(pass, "root", std::span<const Var>(st.day_h).subspan(first));
    } else {
      std::vector<IrcChild> kids;
      for (std::size_t d = first; d < nd; ++d) kids.push_back({d - first, st.day_h[d], st.day_c[d]});
      const std::size_t zero[1] = {0};
      st.root = irc(ad::gather_rows(pass.param("emb.root"), zero), kids, irc_weights(pass, "root")).h;
    }
  }

  Prediction& pr = res.pred;
  pr.day = head(pass, "day", st.root);
  if (!ab.no_aux_node_preds)
    pr.period = head(pass, "period", st.period_out[tree.current.day][tree.current.period]);
  pr.checkin = head(pass, "checkin", st.leaf_out[n - 1]);
  if (!ab.no_geo_head) pr.geo = head(pass, "geo", st.root);
  if (!ab.no_cat_head) pr.cat = head(pass, "cat", st.root);
  const double eta = ab.no_aux_node_preds ? 0.0 : config_.eta;
  const double delta = ab.no_aux_node_preds ? 0.0 : config_.delta;
  pr.rec = recommend_scores(pr.day, pr.period, pr.checkin, eta, delta);
  return res;
}

Var MTNet::loss(Pass& pass, const Prediction& pred, const CheckIn& label, LossParts* parts) const {
  const auto& ab = config_.ablations;
  const std::size_t poi[1] = {label.poi_id};
  const std::size_t geo[1] = {label.geo_cluster_id};
  const std::size_t cat[1] = {label.category_id};

  const Var ce_day = ad::cross_entropy_logits(pred.day, poi);
  const Var ce_checkin = ad::cross_entropy_logits(pred.checkin, poi);
  Var ce_period;
  Var l_poi = ce_day;
  if (pred.period.valid()) {
    ce_period = ad::cross_entropy_logits(pred.period, poi);
    l_poi = ad::add(l_poi, ce_period);
  }
  l_poi = ad::add(l_poi, ce_checkin);
  Var l_geo, l_cat;
  if (pred.geo.valid()) l_geo = ad::cross_entropy_logits(pred.geo, geo);
  if (pred.cat.valid()) l_cat = ad::cross_entropy_logits(pred.cat, cat);

  const Var tasks[3] = {l_poi, l_geo, l_cat};
  Var sigmas[3];
  if (!ab.no_multitask) {
    sigmas[0] = pass.param("loss.log_sigma_poi");
    if (l_geo.valid()) sigmas[1] = pass.param("loss.log_sigma_geo");
    if (l_cat.valid()) sigmas[2] = pass.param("loss.log_sigma_cat");
  }
  const Var total = multitask_loss(tasks, sigmas, ab.no_multitask);
  if (parts) {
    parts->ce_day = ce_day.item();
    parts->ce_period = ce_period.valid() ? ce_period.item() : 0.0;
    parts->ce_checkin = ce_checkin.item();
    parts->poi = l_poi.item();
    parts->geo = l_geo.valid() ? l_geo.item() : 0.0;
    parts->cat = l_cat.valid() ? l_cat.item() : 0.0;
    parts->total = total.item();
  }
  return total;
}

}  // namespace mtnet::model
