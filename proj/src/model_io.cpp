#include "zerolight/model_io.hpp"

#include "zerolight/errors.hpp"

namespace zerolight {

nlohmann::json curve_network_metadata(const CurveNetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  const auto table = curve_network_layers(spec);
  const char* inputs[7] = {"image", "e_conv1", "e_conv2", "e_conv3", "concat(e_conv3,e_conv4)",
                           "concat(e_conv2,e_conv5)", "concat(e_conv1,e_conv6)"};
  for (std::size_t i = 0; i < table.size(); ++i) {
    layers.push_back({{"name", table[i].name},
                      {"type", "conv2d"},
                      {"in_channels", table[i].in_channels},
                      {"out_channels", table[i].out_channels},
                      {"kernel", 3},
                      {"stride", 1},
                      {"padding", 1},
                      {"input", inputs[i]},
                      {"activation", i + 1 == table.size() ? "tanh" : "relu"}});
  }
  return {{"format_version", kModelFormatVersion},
          {"kind", "curve_network"},
          {"n_iterations", spec.n_iterations},
          {"channel_width", spec.width},
          {"parameter_count", curve_network_parameter_count(spec)},
          {"layers", layers}};
}

CurveNetworkSpec curve_network_spec_from_json(const nlohmann::json& meta) {
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ParseError("unsupported model format version " + std::to_string(version));
    }
    CurveNetworkSpec spec;
    spec.n_iterations = meta.at("n_iterations").get<int>();
    spec.width = meta.at("channel_width").get<int>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model metadata: ") + e.what());
  }
}

void put_curve_network(TensorArchive& archive, const CurveNetworkf& net, const std::string& prefix) {
  const auto& p = net.parameters();
  for (const auto& l : net.layers()) {
    archive.put(prefix + l.name + ".weight", {l.out_channels, l.in_channels, 3, 3},
                std::span<const float>(p.data() + l.weight_offset, static_cast<std::size_t>(l.weight_size())));
    archive.put(prefix + l.name + ".bias", {l.out_channels},
                std::span<const float>(p.data() + l.bias_offset, static_cast<std::size_t>(l.out_channels)));
  }
}

CurveNetworkf get_curve_network(const TensorArchive& archive, const CurveNetworkSpec& spec, const std::string& prefix) {
  CurveNetworkf net(spec);
  auto& p = net.parameters();
  for (const auto& l : net.layers()) {
    const auto& w = archive.at(prefix + l.name + ".weight");
    const auto& b = archive.at(prefix + l.name + ".bias");
    const std::vector<std::int64_t> wshape{l.out_channels, l.in_channels, 3, 3};
    if (w.shape != wshape || b.shape != std::vector<std::int64_t>{l.out_channels}) {
      throw ParseError("model checkpoint: shape mismatch for " + l.name);
    }
    std::copy(w.data.begin(), w.data.end(), p.data() + l.weight_offset);
    std::copy(b.data.begin(), b.data.end(), p.data() + l.bias_offset);
  }
  return net;
}

void save_curve_network(const std::filesystem::path& path, const CurveNetworkf& net,
                        const nlohmann::json& extra_metadata) {
  if (!net.initialized()) throw InvalidState("save_curve_network: network is not initialized");
  TensorArchive archive;
  put_curve_network(archive, net);
  nlohmann::json meta = curve_network_metadata(net.spec());
  for (const auto& [k, v] : extra_metadata.items()) meta[k] = v;
  write_tensor_archive(path, archive);
  write_json_atomic(sidecar_path(path), meta);
}

CurveNetworkf load_curve_network(const std::filesystem::path& path) {
  const auto meta = read_json_file(sidecar_path(path));
  const auto spec = curve_network_spec_from_json(meta);
  return get_curve_network(read_tensor_archive(path), spec);
}

}  // namespace zerolight
