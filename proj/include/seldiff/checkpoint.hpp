#pragma once

// Binary checkpoint:
//
//   "SDCK"  u32 version  u64 header_bytes  header (JSON text)
//   then every tensor listed in the header, as little-endian f64, in order.
//
// The header records the model and diffusion settings, the normalization
// statistics, the method, the model and config hashes, and the name and
// shape of each tensor. Saving a loaded checkpoint reproduces the file byte
// for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seldiff/config.hpp"
#include "seldiff/data.hpp"
#include "seldiff/denoiser.hpp"
#include "seldiff/diffusion.hpp"
#include "seldiff/error.hpp"
#include "seldiff/method.hpp"
#include "seldiff/report.hpp"

namespace seldiff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  nn::DenoiserParams params;
  diffusion::DiffusionConfig diffusion;
  Method method = Method::kAnomalyFilter;
  data::NormStats norm;
  std::uint64_t model_hash = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline Json header_json(const Checkpoint& ck) {
  const auto& m = ck.params.config;
  const auto& d = ck.diffusion;
  Json tensors = Json::array();
  for (const auto& p : ck.params.named()) tensors.push_back({{"name", p.name}, {"shape", p.var.shape()}});
  tensors.push_back({{"name", "feature_pe"}, {"shape", ck.params.feature_pe.shape()}});
  Json j;
  j["model"] = {{"n_blocks", m.n_blocks},   {"latent_dim", m.latent_dim},
                {"n_heads", m.n_heads},     {"ff_dim", m.ff_dim},
                {"step_embed_dim", m.step_embed_dim}, {"n_features", m.n_features},
                {"window_len", m.window_len}, {"max_step", m.max_step}};
  j["diffusion"] = {{"T", d.steps},
                    {"S", d.reverse_steps},
                    {"beta_start", d.beta_start},
                    {"beta_end", d.beta_end},
                    {"scale_mode", std::string(diffusion::to_string(d.scale_mode))},
                    {"p", d.mask_ratio},
                    {"c", d.loss_weight},
                    {"omega", d.inference_noise}};
  j["method"] = std::string(to_string(ck.method));
  j["norm"] = {{"mean", ck.norm.mean}, {"scale", ck.norm.scale}};
  j["model_hash"] = config::hash_hex(ck.model_hash);
  j["config_hash"] = ck.config_hash;
  j["seed"] = ck.seed;
  j["tensors"] = tensors;
  return j;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) fail(ErrorKind::kIo, path, ": truncated checkpoint");
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const std::string header = detail::header_json(ck).dump();
  out.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  auto dump = [&](const NdArray& a) {
    out.write(reinterpret_cast<const char*>(a.data().data()),
              static_cast<std::streamsize>(a.size() * sizeof(double)));
  };
  for (const auto& p : ck.params.named()) dump(p.var.value());
  dump(ck.params.feature_pe);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  write_checkpoint(out, ck);
  if (!out) fail(ErrorKind::kIo, "write failed for '", path, "'");
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& path = "<checkpoint>") {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    fail(ErrorKind::kData, path, ": not a checkpoint file");
  }
  const auto version = detail::take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kData, path, ": checkpoint version ", version, " (expected ", kCheckpointVersion, ")");
  }
  const auto header_len = detail::take<std::uint64_t>(in, path);
  if (header_len > (1u << 26)) fail(ErrorKind::kData, path, ": implausible header size");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail(ErrorKind::kIo, path, ": truncated checkpoint header");

  Checkpoint ck;
  try {
    const Json j = Json::parse(header);
    const Json& m = j.at("model");
    nn::DenoiserConfig mc;
    mc.n_blocks = m.at("n_blocks").get<std::size_t>();
    mc.latent_dim = m.at("latent_dim").get<std::size_t>();
    mc.n_heads = m.at("n_heads").get<std::size_t>();
    mc.ff_dim = m.at("ff_dim").get<std::size_t>();
    mc.step_embed_dim = m.at("step_embed_dim").get<std::size_t>();
    mc.n_features = m.at("n_features").get<std::size_t>();
    mc.window_len = m.at("window_len").get<std::size_t>();
    mc.max_step = m.at("max_step").get<std::size_t>();
    const Json& d = j.at("diffusion");
    ck.diffusion.steps = d.at("T").get<std::size_t>();
    ck.diffusion.reverse_steps = d.at("S").get<std::size_t>();
    ck.diffusion.beta_start = d.at("beta_start").get<double>();
    ck.diffusion.beta_end = d.at("beta_end").get<double>();
    ck.diffusion.scale_mode = diffusion::parse_scale_mode(d.at("scale_mode").get<std::string>());
    ck.diffusion.mask_ratio = d.at("p").get<double>();
    ck.diffusion.loss_weight = d.at("c").get<double>();
    ck.diffusion.inference_noise = d.at("omega").get<double>();
    ck.method = parse_method(j.at("method").get<std::string>());
    ck.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
    ck.norm.scale = j.at("norm").at("scale").get<std::vector<double>>();
    ck.model_hash = std::stoull(j.at("model_hash").get<std::string>(), nullptr, 16);
    ck.config_hash = j.at("config_hash").get<std::string>();
    ck.seed = j.at("seed").get<std::uint64_t>();

    ck.params = nn::DenoiserParams::shaped_like(mc);
    auto named = ck.params.named();
    const Json& tensors = j.at("tensors");
    if (tensors.size() != named.size() + 1) {
      fail(ErrorKind::kData, path, ": header lists ", tensors.size(), " tensors, model has ",
           named.size() + 1);
    }
    auto load = [&](const Json& t, const std::string& name, NdArray& dst) {
      if (t.at("name").get<std::string>() != name || t.at("shape").get<Shape>() != dst.shape()) {
        fail(ErrorKind::kData, path, ": tensor '", t.at("name").get<std::string>(),
             "' does not match model tensor '", name, "' ", shape_str(dst.shape()));
      }
      in.read(reinterpret_cast<char*>(dst.data().data()),
              static_cast<std::streamsize>(dst.size() * sizeof(double)));
      if (!in) fail(ErrorKind::kIo, path, ": truncated tensor data for '", name, "'");
    };
    for (std::size_t i = 0; i < named.size(); ++i) load(tensors[i], named[i].name, named[i].var.mutable_value());
    load(tensors[named.size()], "feature_pe", ck.params.feature_pe);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, path, ": bad checkpoint header: ", e.what());
  }
  if (!ck.params.all_finite()) fail(ErrorKind::kNumeric, path, ": non-finite parameters");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  return read_checkpoint(in, path);
}

}  // namespace seldiff
