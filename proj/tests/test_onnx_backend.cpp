#include <fstream>

#include <gtest/gtest.h>

#include "cogdecomp/onnx_backend.hpp"
#include "onnx.pb.h"
#include "test_util.hpp"

using namespace cogdecomp;

namespace {

void add_input(onnx::GraphProto& g, const std::string& name, std::vector<std::int64_t> dims) {
  auto* in = g.add_input();
  in->set_name(name);
  auto* t = in->mutable_type()->mutable_tensor_type();
  t->set_elem_type(onnx::TensorProto::FLOAT);
  for (auto d : dims) t->mutable_shape()->add_dim()->set_dim_value(d);
}

void add_initializer(onnx::GraphProto& g, const std::string& name, std::vector<std::int64_t> dims,
                     const std::vector<float>& values) {
  auto* t = g.add_initializer();
  t->set_name(name);
  t->set_data_type(onnx::TensorProto::FLOAT);
  for (auto d : dims) t->add_dims(d);
  for (float v : values) t->add_float_data(v);
}

onnx::NodeProto* add_node(onnx::GraphProto& g, const std::string& op, std::vector<std::string> in, std::string out) {
  auto* n = g.add_node();
  n->set_op_type(op);
  for (auto& i : in) n->add_input(i);
  n->add_output(out);
  return n;
}

// y = flatten(x) @ Wt, with Wt stored as (C*H*W) x out.
void write_linear_model(const std::filesystem::path& path, std::vector<std::int64_t> in_shape,
                        const std::vector<float>& wt, std::int64_t out_dim) {
  onnx::ModelProto model;
  model.set_ir_version(8);
  model.add_opset_import()->set_version(13);
  auto& g = *model.mutable_graph();
  g.set_name("linear");
  add_input(g, "x", in_shape);
  const std::int64_t flat = in_shape[1] * in_shape[2] * in_shape[3];
  add_initializer(g, "Wt", {flat, out_dim}, wt);
  auto* flatten = add_node(g, "Flatten", {"x"}, "f");
  auto* axis = flatten->add_attribute();
  axis->set_name("axis");
  axis->set_type(onnx::AttributeProto::INT);
  axis->set_i(1);
  add_node(g, "MatMul", {"f", "Wt"}, "y");
  g.add_output()->set_name("y");
  std::ofstream(path, std::ios::binary) << model.SerializeAsString();
}

Errc error_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

}  // namespace

TEST(OnnxBackend, LinearModelComputesWx) {
  testutil::TempDir dir;
  // W is 3 x 4; the model stores its transpose.
  const float W[3][4] = {{1, 2, 0, -1}, {0.5f, 0, 0, 0}, {-2, 1, 3, 0.25f}};
  std::vector<float> wt;
  for (int i = 0; i < 4; ++i)
    for (int o = 0; o < 3; ++o) wt.push_back(W[o][i]);
  write_linear_model(dir / "m.onnx", {1, 1, 2, 2}, wt, 3);
  std::ofstream(dir / "m.onnx.json") << R"({"input_shape": [1, 1, 2, 2]})";

  const auto backend = OnnxBackend::load(dir / "m.onnx");
  EXPECT_EQ(backend.output_dim(), 3u);
  const Slice2D s{"s", 0, Grid<double>(2, 2, std::vector<double>{4, -1, 2, 8})};
  const std::vector<double> x{4, -1, 2, 8};
  std::vector<double> expected(3, 0.0);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i) expected[o] += W[o][i] * x[i];
  EXPECT_EQ(backend.extract(s), expected);
  EXPECT_EQ(extract_external(s, dir / "m.onnx"), expected);
}

TEST(OnnxBackend, ReplicatesChannelsAndNormalizes) {
  testutil::TempDir dir;
  // Sum of every input value, one output.
  write_linear_model(dir / "sum.onnx", {1, 3, 2, 2}, std::vector<float>(12, 1.0f), 1);
  OnnxSidecar sc{{1, 3, 2, 2}, {1.0, 2.0, 3.0}, {2.0}, ""};
  const auto backend = OnnxBackend::load(dir / "sum.onnx", sc);
  const Slice2D s{"s", 0, Grid<double>(2, 2, std::vector<double>{1, 3, 5, 7})};
  // channel c contributes sum((v - mean_c) / 2) = (16 - 4 mean_c) / 2
  EXPECT_DOUBLE_EQ(backend.extract(s)[0], (16 - 4) / 2.0 + (16 - 8) / 2.0 + (16 - 12) / 2.0);
}

TEST(OnnxBackend, ResizesToDeclaredInput) {
  testutil::TempDir dir;
  write_linear_model(dir / "m.onnx", {1, 1, 2, 2}, {1, 1, 1, 1}, 1);
  const auto backend = OnnxBackend::load(dir / "m.onnx", OnnxSidecar{{1, 1, 2, 2}, {}, {}, ""});
  const Slice2D s{"s", 0, Grid<double>(5, 5, 2.5)};
  EXPECT_DOUBLE_EQ(backend.extract(s)[0], 10.0);
}

TEST(OnnxBackend, GemmReluGraph) {
  testutil::TempDir dir;
  onnx::ModelProto model;
  model.set_ir_version(8);
  auto& g = *model.mutable_graph();
  add_input(g, "x", {1, 1, 1, 2});
  add_initializer(g, "W", {2, 2}, {1, -1, -1, 1});
  add_initializer(g, "b", {2}, {0.5f, 0});
  add_node(g, "Flatten", {"x"}, "f");
  auto* gemm = add_node(g, "Gemm", {"f", "W", "b"}, "z");
  auto* tb = gemm->add_attribute();
  tb->set_name("transB");
  tb->set_type(onnx::AttributeProto::INT);
  tb->set_i(1);
  add_node(g, "Relu", {"z"}, "y");
  g.add_output()->set_name("y");
  std::ofstream(dir / "g.onnx", std::ios::binary) << model.SerializeAsString();
  const auto backend = OnnxBackend::load(dir / "g.onnx", OnnxSidecar{{1, 1, 1, 2}, {}, {}, ""});
  EXPECT_EQ(backend.run({3, 1}), (std::vector<double>{2.5, 0.0}));
}

TEST(OnnxBackend, LoadErrors) {
  testutil::TempDir dir;
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "missing.onnx", OnnxSidecar{{1, 1, 2, 2}, {}, {}, ""}); }),
            Errc::ModelLoadError);
  std::ofstream(dir / "junk.onnx") << "definitely not protobuf \xff\xff\xff";
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "junk.onnx", OnnxSidecar{{1, 1, 2, 2}, {}, {}, ""}); }),
            Errc::ModelLoadError);

  write_linear_model(dir / "m.onnx", {1, 1, 2, 2}, {1, 1, 1, 1}, 1);
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "m.onnx"); }), Errc::ModelLoadError);  // no sidecar
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "m.onnx", OnnxSidecar{{1, 1, 3, 3}, {}, {}, ""}); }),
            Errc::ShapeMismatch);
  std::ofstream(dir / "m.onnx.json") << R"({"input_shape": [1, 1, 2, 2], "scale": 2})";
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "m.onnx"); }), Errc::ModelLoadError);

  onnx::ModelProto conv;
  auto& g = *conv.mutable_graph();
  add_input(g, "x", {1, 1, 2, 2});
  add_node(g, "Conv", {"x"}, "y");
  g.add_output()->set_name("y");
  std::ofstream(dir / "conv.onnx", std::ios::binary) << conv.SerializeAsString();
  EXPECT_EQ(error_of([&] { OnnxBackend::load(dir / "conv.onnx", OnnxSidecar{{1, 1, 2, 2}, {}, {}, ""}); }),
            Errc::ModelLoadError);
}
