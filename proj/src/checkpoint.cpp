#include "mtnet/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtnet/errors.hpp"

namespace mtnet::model {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'T', 'N', 'E', 'T', 'C', 'K', '1'};

void write_reals(std::ofstream& out, std::span<const Real> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

void read_reals(std::ifstream& in, std::span<Real> v, const std::string& path) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  if (!in) throw DataError("checkpoint " + path + " is truncated");
}

}  // namespace

void save_checkpoint(const std::string& path, const MTNet& net, const CheckpointMeta& meta,
                     const train::OptimizerState* optimizer) {
  const auto& ps = net.params();
  json tensors = json::array();
  for (ParamId i = 0; i < ps.size(); ++i)
    tensors.push_back({{"name", ps.name(i)}, {"rows", ps[i].rows()}, {"cols", ps[i].cols()}});
  const auto& vs = net.vocab();
  const json header = {
      {"real_bytes", sizeof(Real)},
      {"model", to_json(net.config())},
      {"vocab", {{"users", vs.users}, {"pois", vs.pois}, {"categories", vs.categories}, {"geo", vs.geo}}},
      {"config_hash", meta.config_hash},
      {"vocab_hash", meta.vocab_hash},
      {"step", meta.step},
      {"epoch", meta.epoch},
      {"extra", meta.extra},
      {"tensors", std::move(tensors)},
      {"optimizer", optimizer != nullptr},
      {"optimizer_step", optimizer ? optimizer->step : 0},
  };
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (ParamId i = 0; i < ps.size(); ++i) write_reals(out, ps[i].data());
    if (optimizer) {
      for (const auto& m : optimizer->m) write_reals(out, m);
      for (const auto& v : optimizer->v) write_reals(out, v);
    }
    if (!out.flush()) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path + " is not an mtnet checkpoint");
  if (len > (1u << 30)) throw DataError("checkpoint header of " + path + " is implausibly large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint " + path + " is truncated");

  LoadedCheckpoint out;
  try {
    const json h = json::parse(text);
    if (h.at("real_bytes").get<std::size_t>() != sizeof(Real))
      throw DataError("checkpoint " + path + " stores " + std::to_string(h.at("real_bytes").get<int>()) +
                      "-byte floats but this build uses " + std::to_string(sizeof(Real)));
    const ModelConfig cfg = model_config_from_json(h.at("model"));
    const auto& jv = h.at("vocab");
    const VocabSizes vs{jv.at("users"), jv.at("pois"), jv.at("categories"), jv.at("geo")};
    out.net = std::make_unique<MTNet>(cfg, vs, cfg.leaf_fanout, 0);
    out.meta.config_hash = h.at("config_hash");
    out.meta.vocab_hash = h.at("vocab_hash");
    out.meta.step = h.at("step");
    out.meta.epoch = h.at("epoch");
    out.meta.extra = h.at("extra");

    auto& ps = out.net->params();
    const auto& tensors = h.at("tensors");
    if (tensors.size() != ps.size())
      throw DataError("checkpoint " + path + " holds " + std::to_string(tensors.size()) +
                      " tensors, the configured model has " + std::to_string(ps.size()));
    for (ParamId i = 0; i < ps.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name") != ps.name(i) || t.at("rows") != ps[i].rows() || t.at("cols") != ps[i].cols())
        throw DataError("checkpoint tensor " + t.at("name").get<std::string>() +
                        " does not match the model layout");
      read_reals(in, ps[i].data(), path);
    }
    if (h.at("optimizer").get<bool>()) {
      auto st = train::OptimizerState::for_params(ps);
      st.step = h.at("optimizer_step");
      for (auto& m : st.m) read_reals(in, m, path);
      for (auto& v : st.v) read_reals(in, v, path);
      out.optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw DataError("checkpoint " + path + " has trailing bytes");
  return out;
}

}  // namespace mtnet::model
