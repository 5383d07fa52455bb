#include <cmath>

#include "mtnet/errors.hpp"
#include "mtnet/model.hpp"

namespace mtnet::model {

using nlohmann::json;

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("model.") + key, "must be positive");
  };
  positive(d_user, "d_user");
  positive(d_poi, "d_poi");
  positive(d_cat, "d_cat");
  positive(d_geo, "d_geo");
  positive(hidden, "hidden");
  positive(ff_dim, "ff_dim");
  positive(heads, "heads");
  positive(max_days, "max_days");
  if (!ablations.no_iac) {
    positive(layers, "layers");
    if (embed_dim() % heads != 0)
      throw ConfigError("model.heads", "must divide the check-in width " + std::to_string(embed_dim()));
    if (hidden % heads != 0) throw ConfigError("model.heads", "must divide model.hidden");
  }
  if (slots_per_day <= 0 || 24 % slots_per_day != 0)
    throw ConfigError("model.slots_per_day", "must be a positive divisor of 24");
  for (auto [v, key] : {std::pair{gamma, "gamma"}, {eta, "eta"}, {delta, "delta"}})
    if (!std::isfinite(v)) throw ConfigError(std::string("model.") + key, "must be finite");
  if (!(dropout_embed >= 0 && dropout_embed < 1))
    throw ConfigError("model.dropout_embed", "must lie in [0, 1)");
  if (!(dropout_param >= 0 && dropout_param < 1))
    throw ConfigError("model.dropout_param", "must lie in [0, 1)");
}

json to_json(const ModelConfig& c) {
  const auto& a = c.ablations;
  return {{"d_user", c.d_user},
          {"d_poi", c.d_poi},
          {"d_cat", c.d_cat},
          {"d_geo", c.d_geo},
          {"hidden", c.hidden},
          {"ff_dim", c.ff_dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"slots_per_day", c.slots_per_day},
          {"leaf_fanout", c.leaf_fanout},
          {"max_days", c.max_days},
          {"gamma", c.gamma},
          {"eta", c.eta},
          {"delta", c.delta},
          {"dropout_embed", c.dropout_embed},
          {"dropout_param", c.dropout_param},
          {"root", c.root == RootMode::CurrentDay ? "current_day" : "super_root"},
          {"tz_offset_seconds", c.tz_offset_seconds},
          {"ablations",
           {{"no_multitask", a.no_multitask},
            {"no_geo_head", a.no_geo_head},
            {"no_cat_head", a.no_cat_head},
            {"no_iac", a.no_iac},
            {"no_irc", a.no_irc},
            {"no_aux_node_preds", a.no_aux_node_preds}}}};
}

namespace {

template <class T>
void read(const json& j, const std::string& path, T& out) {
  try {
    if constexpr (std::is_same_v<T, std::size_t>) {
      if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(path, "expected a non-negative integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
    } else {
      if (!j.is_number()) throw ConfigError(path, "expected a number");
    }
    out = j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ConfigError("model", "expected an object");
  for (const auto& [key, v] : j.items()) {
    const std::string path = "model." + key;
    if (key == "d_user") read(v, path, c.d_user);
    else if (key == "d_poi") read(v, path, c.d_poi);
    else if (key == "d_cat") read(v, path, c.d_cat);
    else if (key == "d_geo") read(v, path, c.d_geo);
    else if (key == "hidden") read(v, path, c.hidden);
    else if (key == "ff_dim") read(v, path, c.ff_dim);
    else if (key == "layers") read(v, path, c.layers);
    else if (key == "heads") read(v, path, c.heads);
    else if (key == "slots_per_day") read(v, path, c.slots_per_day);
    else if (key == "leaf_fanout") read(v, path, c.leaf_fanout);
    else if (key == "max_days") read(v, path, c.max_days);
    else if (key == "gamma") read(v, path, c.gamma);
    else if (key == "eta") read(v, path, c.eta);
    else if (key == "delta") read(v, path, c.delta);
    else if (key == "dropout_embed") read(v, path, c.dropout_embed);
    else if (key == "dropout_param") read(v, path, c.dropout_param);
    else if (key == "tz_offset_seconds") read(v, path, c.tz_offset_seconds);
    else if (key == "root") {
      if (v == "current_day") c.root = RootMode::CurrentDay;
      else if (v == "super_root") c.root = RootMode::SuperRoot;
      else throw ConfigError(path, "expected \"current_day\" or \"super_root\"");
    } else if (key == "ablations") {
      if (!v.is_object()) throw ConfigError(path, "expected an object");
      auto& a = c.ablations;
      for (const auto& [flag, fv] : v.items()) {
        const std::string fp = path + "." + flag;
        if (flag == "no_multitask") read(fv, fp, a.no_multitask);
        else if (flag == "no_geo_head") read(fv, fp, a.no_geo_head);
        else if (flag == "no_cat_head") read(fv, fp, a.no_cat_head);
        else if (flag == "no_iac") read(fv, fp, a.no_iac);
        else if (flag == "no_irc") read(fv, fp, a.no_irc);
        else if (flag == "no_aux_node_preds") read(fv, fp, a.no_aux_node_preds);
        else throw ConfigError(fp, "unknown key");
      }
    } else {
      throw ConfigError(path, "unknown key");
    }
  }
  c.validate();
  return c;
}

}  // namespace mtnet::model
