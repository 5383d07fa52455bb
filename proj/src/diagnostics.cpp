#include "mtnet/diagnostics.hpp"

#include <random>

#include "mtnet/hash.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::model {

GradCheckFixture grad_check_fixture() {
  constexpr std::int64_t aug1 = 1343779200;  // 2012-08-01 00:00 UTC
  constexpr std::int64_t h = 3600;
  const auto ci = [](std::int64_t t, std::uint32_t poi) {
    CheckIn c;
    c.user_id = 1;
    c.poi_id = poi;
    c.category_id = poi % 3;
    c.geo_cluster_id = poi % 2;
    c.timestamp = t;
    return c;
  };
  GradCheckFixture f;
  f.prefix = {ci(aug1 + 8 * h, 0), ci(aug1 + 13 * h, 1), ci(aug1 + 14 * h, 2),
              ci(aug1 + 86400 + 9 * h, 3), ci(aug1 + 86400 + 10 * h, 4)};
  f.label = ci(aug1 + 86400 + 11 * h, 5);
  return f;
}

ModelConfig grad_check_config() {
  ModelConfig c;
  c.d_user = c.d_poi = c.d_cat = c.d_geo = 2;
  c.hidden = 6;
  c.ff_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.slots_per_day = 4;
  c.dropout_embed = 0.0;
  c.dropout_param = 0.0;
  return c;
}

ad::GradCheckReport full_model_grad_check(const ModelConfig& config, std::uint64_t seed,
                                          const ad::GradCheckOptions& opts) {
  const auto fx = grad_check_fixture();
  const auto tree = tree::build_mobility_tree(fx.prefix, config.slots_per_day, config.tz_offset_seconds);
  MTNet net(config, fx.vocab, tree::tree_stats(tree).max_leaves_per_period, seed);
  ad::Rng rng(mix_seed(seed, 1));
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (ad::ParamId i = 0; i < net.params().size(); ++i)
    for (auto& v : net.params()[i].data()) v += static_cast<Real>(jitter(rng));
  const std::uint64_t mask_seed = mix_seed(seed, 2);
  const auto fn = [&](ad::Tape& t, ad::GradBuffers* sink) {
    ad::Rng masks(mask_seed);  // identical dropout masks in every evaluation
    Pass pass(net, t, sink);
    pass.train = true;
    pass.rng = &masks;
    const auto fr = net.forward(pass, tree);
    return net.loss(pass, fr.pred, fx.label);
  };
  return ad::grad_check_params(fn, net.params(), opts);
}

}  // namespace mtnet::model
