#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtnet/autodiff.hpp"
#include "mtnet/tree.hpp"
#include "mtnet/types.hpp"

// MTNet: check-in node initialisation, intra-hierarchy attention (IAC),
// inter-hierarchy N-ary Tree-LSTM (IRC), the four-step interaction over a
// mobility tree, prediction heads, the uncertainty-weighted multitask loss
// and recommendation score fusion.
namespace mtnet::model {

using ad::ParamId;
using ad::Tensor;
using ad::Var;

enum class RootMode {
  CurrentDay,  // e^(k) is the hidden state of the day holding the last check-in
  SuperRoot,   // an extra IRC level aggregates all day nodes into a virtual root
};

struct Ablations {
  bool no_multitask = false;       // L = L_l + L_g + L_c, no learned sigmas
  bool no_geo_head = false;        // no geo head, no L_g
  bool no_cat_head = false;        // no category head, no L_c
  bool no_iac = false;             // Steps 1 and 3 are the identity
  bool no_irc = false;             // Steps 2 and 4 mean-pool children + linear map
  bool no_aux_node_preds = false;  // no period head; eta = delta = 0

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ModelConfig {
  std::size_t d_user = 128;
  std::size_t d_poi = 128;
  std::size_t d_cat = 32;
  std::size_t d_geo = 32;
  std::size_t hidden = 512;   // Tree-LSTM state width
  std::size_t ff_dim = 1024;  // IAC feed-forward inner width
  std::size_t layers = 2;     // per IAC stack
  std::size_t heads = 2;
  int slots_per_day = 4;
  std::size_t leaf_fanout = 0;  // 0: dataset maximum
  std::size_t max_days = 2;     // super-root fan-out
  double gamma = 1.0;
  double eta = 1.0;
  double delta = 1.0;
  double dropout_embed = 0.4;
  double dropout_param = 0.6;
  RootMode root = RootMode::CurrentDay;
  std::int64_t tz_offset_seconds = 0;
  Ablations ablations;

  std::size_t embed_dim() const { return d_user + d_poi + d_cat + d_geo; }
  // Throws ConfigError naming the offending "model.*" key.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct VocabSizes {
  std::size_t users = 0;
  std::size_t pois = 0;
  std::size_t categories = 0;
  std::size_t geo = 0;

  friend bool operator==(const VocabSizes&, const VocabSizes&) = default;
};

// ---- building blocks (operate on Vars, usable on any tape) ----------------

struct IacLayerWeights {
  std::vector<Var> wq, wk, wv;  // one D_x x (D_x / H) matrix per head
  Var ln1_gain, ln1_bias;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
  Var ln2_gain, ln2_bias;
};

// Attention weights recorded per (group, layer, head), each M x M.
struct IacTrace {
  std::vector<Tensor> alpha;
};

struct IacRuntime {
  double dropout = 0.0;  // feed-forward dropout
  bool train = false;
  ad::Rng* rng = nullptr;  // required when train and dropout > 0
  IacTrace* trace = nullptr;
};

// Self-attention encoder over the rows of x (M x D_x). Rows with a non-zero
// pad_mask entry (empty mask: none) neither attend nor are attended to and
// come out as zero rows. Throws DataError when every row is masked.
Var iac(Var x, std::span<const std::uint8_t> pad_mask, std::span<const IacLayerWeights> layers,
        const IacRuntime& rt);

struct IrcWeights {
  Var w_i, w_f, w_o, w_u;  // D_in x hidden
  Var u_i, u_o, u_u;       // (N * hidden) x hidden, child block l at rows l*hidden
  Var u_f;                 // (N * hidden) x (N * hidden), block (l, k) maps h_l into f_k
  Var b_i, b_f, b_o, b_u;  // 1 x hidden
  std::size_t fanout = 0;
  std::size_t hidden = 0;
};

struct IrcChild {
  std::size_t position = 0;  // in [0, fanout)
  Var h;
  Var c;
};

struct IrcState {
  Var h;  // e''
  Var c;
};

// One N-ary Tree-LSTM transition. Children absent from `children` behave as
// zero (h, c) pairs. Throws ShapeError when there are more children than the
// fan-out, a position is out of range or repeated.
IrcState irc(Var e, std::span<const IrcChild> children, const IrcWeights& w);

// e_s = concat(e_user, e_poi, e_cat, e_geo) + gamma * hour_row.
Var init_checkin_node(Var e_user, Var e_poi, Var e_cat, Var e_geo, Var hour_row, double gamma);

// y_rec = eta * day + delta * period + checkin; an invalid period Var is
// treated as absent.
Var recommend_scores(Var day, Var period, Var checkin, double eta, double delta);

// Sum over tasks of exp(-2 s) / 2 * L + s, or the plain sum when `plain`.
// Tasks with an invalid loss Var are skipped.
Var multitask_loss(std::span<const Var> task_losses, std::span<const Var> log_sigmas, bool plain);

// ---- the network ---------------------------------------------------------

struct Prediction {
  Var day;      // POI logits from the root-level node
  Var period;   // POI logits from the current period node (invalid if ablated)
  Var checkin;  // POI logits from the last check-in leaf
  Var geo;      // invalid if ablated
  Var cat;      // invalid if ablated
  Var rec;      // fused recommendation scores
};

struct NodeStates {
  std::vector<Var> leaf_embed;  // e_s per leaf position (invalid when truncated)
  std::vector<Var> leaf_out;    // post-IAC e' per leaf position
  // Indexed [day][period].
  std::vector<std::vector<Var>> period_h;    // after IRC
  std::vector<std::vector<Var>> period_c;    // invalid under no_irc
  std::vector<std::vector<Var>> period_out;  // after the period-level IAC
  std::vector<Var> day_h;
  std::vector<Var> day_c;
  Var root;  // e^(k)
};

struct LossParts {
  double poi = 0, geo = 0, cat = 0;  // L_l, L_g, L_c
  double ce_day = 0, ce_period = 0, ce_checkin = 0;
  double total = 0;
};

class MTNet;

// State of one forward pass: the tape, where parameter gradients go, and
// train-mode randomness. Parameters are bound to the tape on first use.
class Pass {
 public:
  Pass(const MTNet& net, ad::Tape& tape, ad::GradBuffers* sink = nullptr);

  bool train = false;
  ad::Rng* rng = nullptr;
  // Optional permutation of the P slots applied to every slot-dependent input
  // (slot embedding, day child position, hour-of-day): slot s is presented as
  // slot_perm[s] while the grouping of leaves is unchanged.
  std::vector<int> slot_perm;
  IacTrace* trace = nullptr;

  ad::Tape& tape() { return tape_; }
  Var param(ParamId id);
  Var param(const std::string& name);

 private:
  const MTNet& net_;
  ad::Tape& tape_;
  ad::GradBuffers* sink_;
  std::vector<Var> bound_;
};

struct ForwardResult {
  NodeStates states;
  Prediction pred;
  std::size_t truncated_leaves = 0;  // dropped by the leaf fan-out cap
};

class MTNet {
 public:
  // Registers and initialises every parameter the configuration uses.
  // `leaf_fanout` resolves config.leaf_fanout == 0.
  MTNet(ModelConfig config, VocabSizes vocab, std::size_t dataset_max_leaves, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }  // leaf_fanout resolved
  const VocabSizes& vocab() const { return vocab_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  Var checkin_node(Pass& pass, const CheckIn& c) const;
  IrcWeights irc_weights(Pass& pass, const std::string& level) const;  // "period" | "day" | "root"
  std::vector<IacLayerWeights> iac_weights(Pass& pass, const std::string& stack) const;  // "leaf" | "period"

  // The four-step interaction plus heads and score fusion.
  ForwardResult forward(Pass& pass, const tree::MobilityTree& tree) const;

  // L_final for one sample.
  Var loss(Pass& pass, const Prediction& pred, const CheckIn& label, LossParts* parts = nullptr) const;

  // Presented slot and hour for a timestamp under pass.slot_perm.
  int slot_of(const Pass& pass, int slot) const;
  int hour_of(const Pass& pass, std::int64_t timestamp) const;

 private:
  void add_matrix(const std::string& name, std::size_t rows, std::size_t cols, ad::Rng& rng);
  void add_bias(const std::string& name, std::size_t cols, Real value = 0);
  void add_embedding(const std::string& name, std::size_t rows, std::size_t cols, ad::Rng& rng);
  void add_iac_stack(const std::string& stack, std::size_t width, ad::Rng& rng);
  void add_irc(const std::string& level, std::size_t in, std::size_t fanout, ad::Rng& rng);

  Var pooled(Pass& pass, const std::string& level, std::span<const Var> children) const;
  Var head(Pass& pass, const std::string& name, Var x) const;

  ModelConfig config_;
  VocabSizes vocab_;
  ad::ParamStore params_;
};

// Slot permutation with no fixed points (for P >= 2), seeded.
std::vector<int> random_derangement(int slots, std::uint64_t seed);

}  // namespace mtnet::model
