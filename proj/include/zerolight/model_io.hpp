#pragma once

#include "zerolight/curve_net.hpp"
#include "zerolight/tensor_archive.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace zerolight {

inline constexpr int kModelFormatVersion = 1;

/// Framework-agnostic description of the estimator, stored in the
/// checkpoint sidecar.
nlohmann::json curve_network_metadata(const CurveNetworkSpec& spec);

/// Adds the network tensors ("e_convN.weight" as [out, in, 3, 3] and
/// "e_convN.bias") to an archive, optionally under a name prefix.
void put_curve_network(TensorArchive& archive, const CurveNetworkf& net, const std::string& prefix = "");
CurveNetworkf get_curve_network(const TensorArchive& archive, const CurveNetworkSpec& spec,
                                const std::string& prefix = "");

/// Writes <path> (tensors) and <path>.json (metadata) atomically.
void save_curve_network(const std::filesystem::path& path, const CurveNetworkf& net,
                        const nlohmann::json& extra_metadata = nlohmann::json::object());
CurveNetworkf load_curve_network(const std::filesystem::path& path);

CurveNetworkSpec curve_network_spec_from_json(const nlohmann::json& meta);

}  // namespace zerolight
