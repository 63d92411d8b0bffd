#pragma once

// Feature extraction through an ONNX model. Preprocessing comes from a JSON
// sidecar:
//   {"input_shape": [1, C, H, W], "mean": [...C], "std": [...C],
//    "output_name": "features"}
// Slices are bilinearly resized to H x W, replicated across C channels and
// normalized per channel as (x - mean[c]) / std[c].
//
// The interpreter covers a small operator set (Identity, Constant, Flatten,
// Reshape, MatMul, Gemm, Add, Sub, Mul, Div, Relu, Sigmoid, Tanh, Softmax,
// GlobalAveragePool); other operators fail at load time.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cogdecomp/feature_pipeline.hpp"

namespace cogdecomp {

struct OnnxSidecar {
  std::vector<std::int64_t> input_shape;  // N, C, H, W with N == 1
  std::vector<double> mean;
  std::vector<double> std;
  std::string output_name;  // empty = first graph output

  static OnnxSidecar load(const std::filesystem::path& path);
  static OnnxSidecar from_json(const nlohmann::json& j);
};

/// Default sidecar location: "<model>.json".
inline std::filesystem::path default_sidecar_path(const std::filesystem::path& model) {
  return std::filesystem::path(model.string() + ".json");
}

class OnnxBackend final : public FeatureBackend {
 public:
  static OnnxBackend load(const std::filesystem::path& model_path, const OnnxSidecar& sidecar);
  static OnnxBackend load(const std::filesystem::path& model_path) {
    return load(model_path, OnnxSidecar::load(default_sidecar_path(model_path)));
  }

  std::string name() const override { return "onnx"; }
  std::size_t output_dim() const override;
  std::vector<double> extract(const Slice2D& slice) const override;

  /// Runs the graph on an already preprocessed N x C x H x W input.
  std::vector<double> run(const std::vector<double>& input) const;

 private:
  struct Impl;
  explicit OnnxBackend(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

inline std::vector<double> extract_external(const Slice2D& s, const std::filesystem::path& model_path) {
  return OnnxBackend::load(model_path).extract(s);
}

}  // namespace cogdecomp
