#include "cogdecomp/onnx_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "onnx.pb.h"

namespace cogdecomp {
namespace {

using Shape = std::vector<std::int64_t>;

struct Tensor {
  Shape shape;
  std::vector<double> data;
};

std::int64_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
  o << ']';
  return o.str();
}

[[noreturn]] void load_error(const std::string& msg) { throw Error(Errc::ModelLoadError, msg); }
[[noreturn]] void shape_error(const std::string& msg) { throw Error(Errc::ShapeMismatch, msg); }

template <class T>
std::vector<double> from_raw(const std::string& raw, std::int64_t count) {
  if (static_cast<std::int64_t>(raw.size()) != count * static_cast<std::int64_t>(sizeof(T)))
    load_error("raw_data size does not match tensor dims");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * static_cast<std::int64_t>(sizeof(T)), sizeof(T));
    out[static_cast<std::size_t>(i)] = static_cast<double>(v);
  }
  return out;
}

Tensor decode_tensor(const onnx::TensorProto& t) {
  Tensor out;
  for (auto d : t.dims()) out.shape.push_back(d);
  const auto count = element_count(out.shape);
  const bool raw = t.has_raw_data();
  switch (t.data_type()) {
    case onnx::TensorProto::FLOAT:
      out.data = raw ? from_raw<float>(t.raw_data(), count)
                     : std::vector<double>(t.float_data().begin(), t.float_data().end());
      break;
    case onnx::TensorProto::DOUBLE:
      out.data = raw ? from_raw<double>(t.raw_data(), count)
                     : std::vector<double>(t.double_data().begin(), t.double_data().end());
      break;
    case onnx::TensorProto::INT64:
      out.data = raw ? from_raw<std::int64_t>(t.raw_data(), count)
                     : std::vector<double>(t.int64_data().begin(), t.int64_data().end());
      break;
    case onnx::TensorProto::INT32:
      out.data = raw ? from_raw<std::int32_t>(t.raw_data(), count)
                     : std::vector<double>(t.int32_data().begin(), t.int32_data().end());
      break;
    default:
      load_error("tensor '" + t.name() + "' has unsupported data_type " + std::to_string(t.data_type()));
  }
  if (static_cast<std::int64_t>(out.data.size()) != count)
    load_error("tensor '" + t.name() + "' element count does not match dims");
  return out;
}

const onnx::AttributeProto* find_attr(const onnx::NodeProto& n, const std::string& name) {
  for (const auto& a : n.attribute())
    if (a.name() == name) return &a;
  return nullptr;
}

std::int64_t int_attr(const onnx::NodeProto& n, const std::string& name, std::int64_t fallback) {
  const auto* a = find_attr(n, name);
  return a ? a->i() : fallback;
}

double float_attr(const onnx::NodeProto& n, const std::string& name, double fallback) {
  const auto* a = find_attr(n, name);
  return a ? a->f() : fallback;
}

std::size_t normalize_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis > r) shape_error("axis out of range");
  return static_cast<std::size_t>(axis);
}

// Numpy-style multidirectional broadcasting.
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const std::function<double(double, double)>& op) {
  const std::size_t rank = std::max(a.shape.size(), b.shape.size());
  Shape sa(rank, 1), sb(rank, 1), so(rank, 1);
  std::copy(a.shape.begin(), a.shape.end(), sa.begin() + static_cast<std::ptrdiff_t>(rank - a.shape.size()));
  std::copy(b.shape.begin(), b.shape.end(), sb.begin() + static_cast<std::ptrdiff_t>(rank - b.shape.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1)
      shape_error("cannot broadcast " + shape_str(a.shape) + " with " + shape_str(b.shape));
    so[i] = std::max(sa[i], sb[i]);
  }
  Tensor out{so, std::vector<double>(static_cast<std::size_t>(element_count(so)))};
  Shape idx(rank, 0);
  for (std::size_t flat = 0; flat < out.data.size(); ++flat) {
    std::int64_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia = ia * sa[d] + (sa[d] == 1 ? 0 : idx[d]);
      ib = ib * sb[d] + (sb[d] == 1 ? 0 : idx[d]);
    }
    out.data[flat] = op(a.data[static_cast<std::size_t>(ia)], b.data[static_cast<std::size_t>(ib)]);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < so[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

Tensor matmul2d(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.shape.size() != 2 || b.shape.size() != 2) shape_error("matrix product needs rank-2 operands");
  const auto M = trans_a ? a.shape[1] : a.shape[0];
  const auto K = trans_a ? a.shape[0] : a.shape[1];
  const auto Kb = trans_b ? b.shape[1] : b.shape[0];
  const auto N = trans_b ? b.shape[0] : b.shape[1];
  if (K != Kb) shape_error("inner dimensions differ: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor out{{M, N}, std::vector<double>(static_cast<std::size_t>(M * N), 0.0)};
  auto A = [&](std::int64_t i, std::int64_t k) {
    return a.data[static_cast<std::size_t>(trans_a ? k * a.shape[1] + i : i * a.shape[1] + k)];
  };
  auto B = [&](std::int64_t k, std::int64_t j) {
    return b.data[static_cast<std::size_t>(trans_b ? j * b.shape[1] + k : k * b.shape[1] + j)];
  };
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < K; ++k) s += A(i, k) * B(k, j);
      out.data[static_cast<std::size_t>(i * N + j)] = s;
    }
  return out;
}

Tensor matmul(Tensor a, Tensor b) {
  const bool vec_a = a.shape.size() == 1;
  const bool vec_b = b.shape.size() == 1;
  if (vec_a) a.shape = {1, a.shape[0]};
  if (vec_b) b.shape = {b.shape[0], 1};
  Tensor out = matmul2d(a, b, false, false);
  if (vec_a && vec_b) out.shape = {};
  else if (vec_a) out.shape = {out.shape[1]};
  else if (vec_b) out.shape = {out.shape[0]};
  return out;
}

const std::set<std::string>& supported_ops() {
  static const std::set<std::string> ops{"Identity", "Constant", "Flatten", "Reshape", "MatMul",
                                         "Gemm",     "Add",      "Sub",     "Mul",     "Div",
                                         "Relu",     "Sigmoid",  "Tanh",    "Softmax", "GlobalAveragePool"};
  return ops;
}

}  // namespace

struct OnnxBackend::Impl {
  onnx::GraphProto graph;
  std::map<std::string, Tensor> initializers;
  std::string input_name;
  std::string output_name;
  OnnxSidecar sidecar;
  std::size_t output_dim = 0;

  Tensor evaluate(Tensor input) const {
    std::map<std::string, Tensor> values = initializers;
    values[input_name] = std::move(input);
    auto get = [&](const onnx::NodeProto& n, int i) -> const Tensor& {
      if (i >= n.input_size() || n.input(i).empty())
        shape_error(n.op_type() + " is missing input " + std::to_string(i));
      auto it = values.find(n.input(i));
      if (it == values.end()) load_error("node '" + n.name() + "' reads undefined value '" + n.input(i) + "'");
      return it->second;
    };
    for (const auto& n : graph.node()) {
      const std::string& op = n.op_type();
      Tensor out;
      if (op == "Identity") {
        out = get(n, 0);
      } else if (op == "Constant") {
        const auto* a = find_attr(n, "value");
        if (!a || !a->has_t()) load_error("Constant without tensor value");
        out = decode_tensor(a->t());
      } else if (op == "Flatten") {
        const Tensor& x = get(n, 0);
        const auto axis = normalize_axis(int_attr(n, "axis", 1), x.shape.size());
        std::int64_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < x.shape.size(); ++d) (d < axis ? outer : inner) *= x.shape[d];
        out = {{outer, inner}, x.data};
      } else if (op == "Reshape") {
        const Tensor& x = get(n, 0);
        const Tensor& spec = get(n, 1);
        Shape shape;
        std::int64_t known = 1;
        int infer = -1;
        for (std::size_t d = 0; d < spec.data.size(); ++d) {
          auto v = static_cast<std::int64_t>(spec.data[d]);
          if (v == 0) {
            if (d >= x.shape.size()) shape_error("Reshape copies a missing dimension");
            v = x.shape[d];
          }
          if (v == -1) {
            if (infer >= 0) shape_error("Reshape has more than one -1");
            infer = static_cast<int>(d);
            shape.push_back(1);
            continue;
          }
          shape.push_back(v);
          known *= v;
        }
        const auto total = element_count(x.shape);
        if (infer >= 0) {
          if (known == 0 || total % known != 0) shape_error("Reshape cannot infer dimension");
          shape[static_cast<std::size_t>(infer)] = total / known;
        }
        if (element_count(shape) != total) shape_error("Reshape to " + shape_str(shape) + " from " + shape_str(x.shape));
        out = {shape, x.data};
      } else if (op == "MatMul") {
        out = matmul(get(n, 0), get(n, 1));
      } else if (op == "Gemm") {
        out = matmul2d(get(n, 0), get(n, 1), int_attr(n, "transA", 0) != 0, int_attr(n, "transB", 0) != 0);
        const double alpha = float_attr(n, "alpha", 1.0);
        for (auto& v : out.data) v *= alpha;
        if (n.input_size() > 2 && !n.input(2).empty()) {
          const double beta = float_attr(n, "beta", 1.0);
          out = broadcast_binary(out, get(n, 2), [beta](double y, double c) { return y + beta * c; });
        }
      } else if (op == "Add") {
        out = broadcast_binary(get(n, 0), get(n, 1), std::plus<>());
      } else if (op == "Sub") {
        out = broadcast_binary(get(n, 0), get(n, 1), std::minus<>());
      } else if (op == "Mul") {
        out = broadcast_binary(get(n, 0), get(n, 1), std::multiplies<>());
      } else if (op == "Div") {
        out = broadcast_binary(get(n, 0), get(n, 1), std::divides<>());
      } else if (op == "Relu" || op == "Sigmoid" || op == "Tanh") {
        out = get(n, 0);
        for (auto& v : out.data)
          v = op == "Relu" ? std::max(v, 0.0) : op == "Tanh" ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v));
      } else if (op == "Softmax") {
        out = get(n, 0);
        if (out.shape.empty()) shape_error("Softmax on a scalar");
        const auto axis = normalize_axis(int_attr(n, "axis", -1), out.shape.size());
        if (axis >= out.shape.size()) shape_error("Softmax axis out of range");
        std::int64_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= out.shape[d];
        for (std::size_t d = axis + 1; d < out.shape.size(); ++d) inner *= out.shape[d];
        const auto len = out.shape[axis];
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            auto at = [&](std::int64_t k) -> double& {
              return out.data[static_cast<std::size_t>((o * len + k) * inner + i)];
            };
            double mx = -INFINITY, sum = 0.0;
            for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, at(k));
            for (std::int64_t k = 0; k < len; ++k) sum += (at(k) = std::exp(at(k) - mx));
            for (std::int64_t k = 0; k < len; ++k) at(k) /= sum;
          }
      } else if (op == "GlobalAveragePool") {
        const Tensor& x = get(n, 0);
        if (x.shape.size() < 3) shape_error("GlobalAveragePool needs N x C x spatial input");
        const std::int64_t spatial = element_count(Shape(x.shape.begin() + 2, x.shape.end()));
        out.shape = {x.shape[0], x.shape[1]};
        out.shape.resize(x.shape.size(), 1);
        out.data.assign(static_cast<std::size_t>(x.shape[0] * x.shape[1]), 0.0);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
          double s = 0.0;
          for (std::int64_t k = 0; k < spatial; ++k) s += x.data[i * static_cast<std::size_t>(spatial) + static_cast<std::size_t>(k)];
          out.data[i] = s / static_cast<double>(spatial);
        }
      } else {
        load_error("unsupported operator " + op);
      }
      if (n.output_size() < 1) load_error(op + " node without output");
      values[n.output(0)] = std::move(out);
    }
    auto it = values.find(output_name);
    if (it == values.end()) load_error("graph never produces output '" + output_name + "'");
    return it->second;
  }
};

OnnxSidecar OnnxSidecar::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"input_shape", "mean", "std", "output_name"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(Errc::ModelLoadError, "unknown sidecar key '" + key + "'");
  OnnxSidecar s;
  s.input_shape = j.at("input_shape").get<std::vector<std::int64_t>>();
  s.mean = j.value("mean", std::vector<double>{});
  s.std = j.value("std", std::vector<double>{});
  s.output_name = j.value("output_name", std::string{});
  return s;
}

OnnxSidecar OnnxSidecar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ModelLoadError, "cannot open sidecar " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ModelLoadError, "bad sidecar " + path.string() + ": " + e.what());
  }
}

OnnxBackend OnnxBackend::load(const std::filesystem::path& model_path, const OnnxSidecar& sidecar) {
  std::ifstream in(model_path, std::ios::binary);
  if (!in) load_error("cannot open model " + model_path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  onnx::ModelProto model;
  if (!model.ParseFromString(buffer.str())) load_error("not an ONNX model: " + model_path.string());

  auto impl = std::make_shared<Impl>();
  impl->graph = model.graph();
  impl->sidecar = sidecar;
  for (const auto& n : impl->graph.node())
    if (!supported_ops().count(n.op_type())) load_error("unsupported operator " + n.op_type());
  for (const auto& t : impl->graph.initializer()) impl->initializers[t.name()] = decode_tensor(t);
  for (const auto& in_info : impl->graph.input())
    if (!impl->initializers.count(in_info.name())) {
      if (!impl->input_name.empty()) load_error("model has more than one runtime input");
      impl->input_name = in_info.name();
    }
  if (impl->input_name.empty()) load_error("model has no runtime input");
  if (impl->graph.output_size() < 1) load_error("model has no outputs");
  impl->output_name = sidecar.output_name.empty() ? impl->graph.output(0).name() : sidecar.output_name;

  const auto& shape = sidecar.input_shape;
  if (shape.size() != 4 || shape[0] != 1 || shape[1] < 1 || shape[2] < 1 || shape[3] < 1)
    shape_error("sidecar input_shape must be [1, C, H, W], got " + shape_str(shape));
  const auto channels = static_cast<std::size_t>(shape[1]);
  for (const auto* v : {&sidecar.mean, &sidecar.std})
    if (!v->empty() && v->size() != channels && v->size() != 1)
      shape_error("normalization constants need 1 or " + std::to_string(channels) + " entries");
  for (double s : sidecar.std)
    if (s == 0.0) load_error("sidecar std contains zero");

  // Compare against statically declared graph input dims.
  for (const auto& in_info : impl->graph.input()) {
    if (in_info.name() != impl->input_name || !in_info.type().has_tensor_type()) continue;
    const auto& tshape = in_info.type().tensor_type().shape();
    if (tshape.dim_size() == 0) continue;
    if (static_cast<std::size_t>(tshape.dim_size()) != shape.size())
      shape_error("model input rank differs from sidecar input_shape");
    for (int d = 0; d < tshape.dim_size(); ++d)
      if (tshape.dim(d).has_dim_value() && tshape.dim(d).dim_value() != shape[static_cast<std::size_t>(d)])
        shape_error("model input shape differs from sidecar input_shape at dim " + std::to_string(d));
  }

  // Dry run determines the output width.
  Tensor probe{shape, std::vector<double>(static_cast<std::size_t>(element_count(shape)), 0.0)};
  impl->output_dim = impl->evaluate(std::move(probe)).data.size();
  for (const auto& out_info : impl->graph.output()) {
    if (out_info.name() != impl->output_name || !out_info.type().has_tensor_type()) continue;
    const auto& tshape = out_info.type().tensor_type().shape();
    std::int64_t declared = 1;
    bool all_static = tshape.dim_size() > 0;
    for (int d = 0; d < tshape.dim_size(); ++d) {
      if (!tshape.dim(d).has_dim_value()) all_static = false;
      else declared *= tshape.dim(d).dim_value();
    }
    if (all_static && declared != static_cast<std::int64_t>(impl->output_dim))
      shape_error("model output size " + std::to_string(impl->output_dim) + " differs from declared " +
                  std::to_string(declared));
  }
  return OnnxBackend(std::move(impl));
}

std::size_t OnnxBackend::output_dim() const { return impl_->output_dim; }

std::vector<double> OnnxBackend::run(const std::vector<double>& input) const {
  const auto& shape = impl_->sidecar.input_shape;
  if (static_cast<std::int64_t>(input.size()) != element_count(shape))
    shape_error("input has " + std::to_string(input.size()) + " values, model expects " + shape_str(shape));
  auto out = impl_->evaluate(Tensor{shape, input}).data;
  if (out.size() != impl_->output_dim) shape_error("model output size changed between runs");
  return out;
}

std::vector<double> OnnxBackend::extract(const Slice2D& slice) const {
  const auto& sc = impl_->sidecar;
  const auto channels = static_cast<std::size_t>(sc.input_shape[1]);
  const auto rows = static_cast<std::size_t>(sc.input_shape[2]);
  const auto cols = static_cast<std::size_t>(sc.input_shape[3]);
  const Grid<double> resized = rows == slice.pixels.rows() && cols == slice.pixels.cols()
                                   ? slice.pixels
                                   : resample_bilinear(slice.pixels, rows, cols);
  std::vector<double> input;
  input.reserve(channels * rows * cols);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sc.mean.empty() ? 0.0 : sc.mean[sc.mean.size() == 1 ? 0 : c];
    const double sd = sc.std.empty() ? 1.0 : sc.std[sc.std.size() == 1 ? 0 : c];
    for (double v : resized.values()) input.push_back((v - mean) / sd);
  }
  return run(input);
}

}  // namespace cogdecomp
