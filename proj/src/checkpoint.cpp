#include "symgpt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace symgpt {

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'M', 'G', 'P', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::pair<std::string, nn::Tensor>> all_params(const TNet& tnet, const GPT& gpt) {
  auto out = tnet.named_parameters();
  auto g = gpt.named_parameters();
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

void write_doubles(std::ofstream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& is, double* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw CheckpointError("checkpoint truncated while reading parameters");
}

nlohmann::json tnet_cfg_json(const TNetConfig& c) {
  return {{"d_max", c.d_max}, {"e", c.e}, {"fc_hidden", c.fc_hidden}};
}

nlohmann::json gpt_cfg_json(const GPTConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"width", c.width},
          {"context", c.context},   {"vocab", c.vocab},     {"dropout", c.dropout}};
}

TNetConfig tnet_cfg_from(const nlohmann::json& j) {
  TNetConfig c;
  c.d_max = j.at("d_max").get<int>();
  c.e = j.at("e").get<int>();
  c.fc_hidden = j.at("fc_hidden").get<int>();
  return c;
}

GPTConfig gpt_cfg_from(const nlohmann::json& j) {
  GPTConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.width = j.at("width").get<int>();
  c.context = j.at("context").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TNet& tnet, const GPT& gpt,
                     const Vocabulary& vocab, const TrainProgress& progress, nn::Adam* adam) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());

  const auto params = all_params(tnet, gpt);
  nlohmann::json header;
  header["format"] = "symgpt-checkpoint";
  header["tnet"] = tnet_cfg_json(tnet.config());
  header["gpt"] = gpt_cfg_json(gpt.config());
  header["charset"] = vocab.charset();
  header["epoch"] = progress.epoch;
  header["global_step"] = progress.global_step;
  header["best_val"] = progress.best_val;
  header["has_adam"] = adam != nullptr;
  header["adam_t"] = adam ? adam->step_count() : 0;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, t] : params)
    plist.push_back({{"name", name}, {"size", t.size()}});
  header["params"] = plist;

  const std::string hs = header.dump();
  os.write(kMagic, sizeof(kMagic));
  const std::uint32_t ver = kVersion;
  os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const std::uint64_t hlen = hs.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  for (const auto& [name, t] : params) write_doubles(os, t.data().data(), t.data().size());
  if (adam) {
    for (int i = 0; i < adam->num_params(); ++i)
      write_doubles(os, adam->moment1(i).data(), adam->moment1(i).size());
    for (int i = 0; i < adam->num_params(); ++i)
      write_doubles(os, adam->moment2(i).data(), adam->moment2(i).size());
  }
  os.close();
  if (!os) throw CheckpointError("write failed for checkpoint: " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());
  std::uint32_t ver = 0;
  is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (!is || ver != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ver) + " in " +
                          path.string());
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!is || hlen == 0 || hlen > (1ull << 30))
    throw CheckpointError("corrupt checkpoint header length in " + path.string());
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw CheckpointError("checkpoint truncated in header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& ex) {
    throw CheckpointError("bad checkpoint header JSON: " + std::string(ex.what()));
  }

  ModelBundle b;
  b.tnet_cfg = tnet_cfg_from(header.at("tnet"));
  b.gpt_cfg = gpt_cfg_from(header.at("gpt"));
  b.vocab = Vocabulary::from_charset(header.at("charset").get<std::string>());
  b.epoch = header.at("epoch").get<int>();
  b.global_step = header.at("global_step").get<std::int64_t>();
  b.best_val = header.at("best_val").get<double>();
  b.has_adam = header.at("has_adam").get<bool>();
  b.adam_t = header.at("adam_t").get<std::int64_t>();

  Rng init_rng(0);  // weights are overwritten below
  b.tnet = std::make_shared<TNet>(b.tnet_cfg, init_rng);
  b.gpt = std::make_shared<GPT>(b.gpt_cfg, init_rng);

  auto params = all_params(*b.tnet, *b.gpt);
  const auto& plist = header.at("params");
  if (plist.size() != params.size())
    throw CheckpointError("checkpoint parameter list does not match model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& meta = plist[i];
    if (meta.at("name").get<std::string>() != params[i].first ||
        meta.at("size").get<std::int64_t>() != params[i].second.size())
      throw CheckpointError("checkpoint parameter mismatch at '" + params[i].first + "'");
  }
  for (auto& [name, t] : params) read_doubles(is, t.data().data(), t.data().size());

  if (b.has_adam) {
    b.adam_m.resize(params.size());
    b.adam_v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      b.adam_m[i].resize(params[i].second.data().size());
      read_doubles(is, b.adam_m[i].data(), b.adam_m[i].size());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      b.adam_v[i].resize(params[i].second.data().size());
      read_doubles(is, b.adam_v[i].data(), b.adam_v[i].size());
    }
  }
  return b;
}

}  // namespace symgpt
