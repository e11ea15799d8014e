#include "emr/checkpoint.hpp"
#include "emr/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace emr {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'R', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in native little-endian order");

std::vector<std::pair<std::string, std::vector<double> *>> named_arrays(Model &model)
{
  std::vector<std::pair<std::string, std::vector<double> *>> arrays;
  for (auto &p : model.parameters()) { arrays.emplace_back(p.name, &p.param->value); }
  for (auto &b : model.buffers()) { arrays.push_back(b); }
  return arrays;
}

} // namespace

void save_checkpoint(std::filesystem::path const &path, Model &model, std::uint64_t seed, int epoch, nlohmann::json const &extra)
{
  if (model.mode() != Model::Mode::Fixed) { throw InvalidArgument("save_checkpoint: only fixed-genotype models are stored"); }
  auto const         arrays = named_arrays(model);
  nlohmann::json     table = nlohmann::json::array();
  std::uint64_t      offset = 0;
  for (auto const &[name, values] : arrays) {
    table.push_back({{"name", name}, {"offset", offset}, {"count", values->size()}});
    offset += values->size() * 4;
  }
  nlohmann::json const header{{"config", to_json(model.config())},
                              {"genotype", to_json(model.genotype())},
                              {"seed", seed},
                              {"epoch", epoch},
                              {"extra", extra},
                              {"arrays", table}};
  std::string const    text = header.dump();
  std::uint64_t const  len = text.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) { throw InvalidArgument("cannot write checkpoint " + path.string()); }
  out.write(kMagic, 8);
  out.write(reinterpret_cast<char const *>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (auto const &[name, values] : arrays) {
    std::vector<float> f(values->begin(), values->end());
    out.write(reinterpret_cast<char const *>(f.data()), static_cast<std::streamsize>(f.size() * 4));
  }
  if (!out) { throw InvalidArgument("short write on checkpoint " + path.string()); }
}

LoadedCheckpoint load_checkpoint(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IngestError("cannot open checkpoint " + path.string()); }
  char          magic[8];
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char *>(&len), 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) { throw IngestError("not a checkpoint: " + path.string()); }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) { throw IngestError("truncated checkpoint header in " + path.string()); }

  nlohmann::json header;
  CheckpointInfo info;
  try {
    header = nlohmann::json::parse(text);
    info.config = network_config_from_json(header.at("config"));
    info.genotype = genotype_from_json(header.at("genotype"));
    info.seed = header.at("seed").get<std::uint64_t>();
    info.epoch = header.at("epoch").get<int>();
    info.extra = header.value("extra", nlohmann::json::object());
  } catch (nlohmann::json::exception const &e) {
    throw IngestError("invalid checkpoint header in " + path.string() + ": " + e.what());
  }

  Model model = Model::fixed(info.config, info.genotype, info.seed);
  std::map<std::string, std::vector<double> *> slots;
  for (auto const &[name, values] : named_arrays(model)) { slots[name] = values; }

  auto const payload = static_cast<std::streamoff>(16 + len);
  for (auto const &entry : header.at("arrays")) {
    auto const name = entry.at("name").get<std::string>();
    auto const count = entry.at("count").get<std::size_t>();
    auto       it = slots.find(name);
    if (it == slots.end() || it->second->size() != count) {
      throw IngestError("checkpoint array '" + name + "' does not fit the stored architecture");
    }
    std::vector<float> f(count);
    in.seekg(payload + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char *>(f.data()), static_cast<std::streamsize>(count * 4));
    if (!in) { throw IngestError("truncated array '" + name + "' in " + path.string()); }
    std::copy(f.begin(), f.end(), it->second->begin());
    slots.erase(it);
  }
  if (!slots.empty()) { throw IngestError("checkpoint " + path.string() + " is missing '" + slots.begin()->first + "'"); }
  return {std::move(info), std::move(model)};
}

} // namespace emr
