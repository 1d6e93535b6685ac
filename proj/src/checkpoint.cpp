#include "iris/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iris/error.hpp"

namespace iris {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "iris-checkpoint";
constexpr int kVersion = 1;

struct Entry {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const OptState* state,
                     const std::map<std::string, std::string>& meta) {
  std::vector<Entry> entries;
  for (const auto& p : params.items()) entries.push_back({p.name, &p.value});
  if (state) {
    require(state->slots.size() == params.size(), "optimizer state does not match the parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& n = params.items()[i].name;
      entries.push_back({"opt.m/" + n, &state->slots[i].m});
      entries.push_back({"opt.v/" + n, &state->slots[i].v});
      entries.push_back({"opt.v_hat/" + n, &state->slots[i].v_hat});
    }
  }

  nlohmann::json header{{"meta", meta}, {"tensors", nlohmann::json::array()}, {"params", params.size()}};
  header["optimizer_step"] = state ? nlohmann::json(state->step) : nlohmann::json(nullptr);
  for (const auto& e : entries) header["tensors"].push_back({{"name", e.name}, {"shape", e.tensor->shape()}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << kMagic << ' ' << kVersion << ' ' << text.size() << '\n' << text;
  for (const auto& e : entries)
    out.write(reinterpret_cast<const char*>(e.tensor->data().data()),
              static_cast<std::streamsize>(e.tensor->size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string first;
  std::getline(in, first);
  std::istringstream line(first);
  std::string magic;
  int version = 0;
  std::size_t header_bytes = 0;
  line >> magic >> version >> header_bytes;
  if (magic != kMagic || !line) throw IoError(path.string() + " is not a checkpoint file");
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));

  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }

  Checkpoint ck;
  ck.meta = header.value("meta", std::map<std::string, std::string>{});
  const auto n_params = header.at("params").get<std::size_t>();
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& t : header.at("tensors")) {
    Tensor value(t.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(value.data().data()), static_cast<std::streamsize>(value.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint data in " + path.string());
    tensors.emplace_back(t.at("name").get<std::string>(), std::move(value));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint data in " + path.string());
  require(n_params <= tensors.size(), "checkpoint header declares more parameters than tensors");

  for (std::size_t i = 0; i < n_params; ++i) ck.params.add(tensors[i].first, std::move(tensors[i].second));
  if (!header.at("optimizer_step").is_null()) {
    require(tensors.size() == 4 * n_params, "checkpoint optimizer section does not match its parameters");
    OptState st;
    st.step = header.at("optimizer_step").get<std::int64_t>();
    for (std::size_t i = 0; i < n_params; ++i) {
      const std::size_t k = n_params + 3 * i;
      st.slots.push_back({std::move(tensors[k].second), std::move(tensors[k + 1].second), std::move(tensors[k + 2].second)});
    }
    ck.state = std::move(st);
  } else {
    require(tensors.size() == n_params, "checkpoint holds tensors beyond its parameters");
  }
  return ck;
}

}  // namespace iris
