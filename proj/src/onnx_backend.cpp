#include <cmath>
#include <mutex>
#include <set>

#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include "msmil/binary_io.hpp"
#include "msmil/error.hpp"
#include "msmil/features.hpp"

namespace msmil {
namespace {

// Minimal protobuf wire-format walker, enough to read graph signatures.
class ProtoReader {
 public:
  explicit ProtoReader(std::string_view data) : data_(data) {}

  bool next(std::uint32_t& field, std::uint32_t& wire) {
    if (pos_ >= data_.size()) return false;
    const std::uint64_t key = varint();
    field = static_cast<std::uint32_t>(key >> 3);
    wire = static_cast<std::uint32_t>(key & 7);
    return true;
  }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= data_.size()) throw FormatError("truncated varint in ONNX model", pos_);
      const auto b = static_cast<std::uint8_t>(data_[pos_++]);
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return v;
    }
    throw FormatError("overlong varint in ONNX model", pos_);
  }

  std::string_view bytes() {
    const std::uint64_t n = varint();
    if (n > data_.size() - pos_) throw FormatError("truncated field in ONNX model", pos_);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void skip(std::uint32_t wire) {
    switch (wire) {
      case 0: varint(); break;
      case 1: advance(8); break;
      case 2: bytes(); break;
      case 5: advance(4); break;
      default: throw FormatError("unsupported protobuf wire type " + std::to_string(wire), pos_);
    }
  }

 private:
  void advance(std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError("truncated field in ONNX model", pos_);
    pos_ += n;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::vector<std::int64_t> read_shape(std::string_view shape) {
  std::vector<std::int64_t> dims;
  ProtoReader r(shape);
  std::uint32_t f, w;
  while (r.next(f, w)) {
    if (f == 1 && w == 2) {  // TensorShapeProto.dim
      std::int64_t value = -1;
      ProtoReader d(r.bytes());
      std::uint32_t df, dw;
      while (d.next(df, dw)) {
        if (df == 1 && dw == 0)
          value = static_cast<std::int64_t>(d.varint());
        else
          d.skip(dw);
      }
      dims.push_back(value);
    } else {
      r.skip(w);
    }
  }
  return dims;
}

OnnxTensorInfo read_value_info(std::string_view vi) {
  OnnxTensorInfo info;
  ProtoReader r(vi);
  std::uint32_t f, w;
  while (r.next(f, w)) {
    if (f == 1 && w == 2) {
      info.name = std::string(r.bytes());
    } else if (f == 2 && w == 2) {  // TypeProto
      ProtoReader t(r.bytes());
      std::uint32_t tf, tw;
      while (t.next(tf, tw)) {
        if (tf == 1 && tw == 2) {  // tensor_type
          ProtoReader tt(t.bytes());
          std::uint32_t ttf, ttw;
          while (tt.next(ttf, ttw)) {
            if (ttf == 2 && ttw == 2)
              info.dims = read_shape(tt.bytes());
            else
              tt.skip(ttw);
          }
        } else {
          t.skip(tw);
        }
      }
    } else {
      r.skip(w);
    }
  }
  return info;
}

std::string dims_to_string(const std::vector<std::int64_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += dims[i] < 0 ? "?" : std::to_string(dims[i]);
  }
  return s + "]";
}

class CnnBackend final : public FeatureBackend {
 public:
  CnnBackend(cv::dnn::Net net, int input_size, std::string source)
      : net_(std::move(net)), input_size_(input_size), source_(std::move(source)) {}

  std::vector<float> embed(const PatchPixels& patch) const override {
    cv::Mat rgb(kPatchSize, kPatchSize, CV_8UC3, const_cast<std::uint8_t*>(patch.rgb.data()));
    cv::Mat sized = rgb;
    if (input_size_ != kPatchSize)
      cv::resize(rgb, sized, cv::Size(input_size_, input_size_), 0, 0, cv::INTER_AREA);

    static constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
    static constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};
    const int dims[4] = {1, 3, input_size_, input_size_};
    cv::Mat blob(4, dims, CV_32F);
    auto* out = blob.ptr<float>();
    const std::size_t plane = static_cast<std::size_t>(input_size_) * input_size_;
    for (int y = 0; y < input_size_; ++y) {
      const auto* row = sized.ptr<std::uint8_t>(y);
      for (int x = 0; x < input_size_; ++x)
        for (int c = 0; c < 3; ++c)
          out[c * plane + static_cast<std::size_t>(y) * input_size_ + x] =
              (row[x * 3 + c] / 255.0f - kMean[c]) / kStd[c];
    }

    cv::Mat result;
    {
      std::lock_guard lock(mutex_);
      net_.setInput(blob);
      result = net_.forward().clone();
    }
    if (result.total() != kFeatureDim)
      throw ModelShapeError("model output has " + std::to_string(result.total()) +
                            " values, expected 512");
    const auto* p = result.ptr<float>();
    return std::vector<float>(p, p + kFeatureDim);
  }

  std::string describe() const override {
    return "onnx(" + source_ + ",input=" + std::to_string(input_size_) + ")";
  }

 private:
  mutable std::mutex mutex_;
  mutable cv::dnn::Net net_;
  int input_size_;
  std::string source_;
};

}  // namespace

OnnxModelInfo read_onnx_model_info(std::string_view model_bytes) {
  OnnxModelInfo info;
  ProtoReader model(model_bytes);
  std::uint32_t f, w;
  bool found_graph = false;
  while (model.next(f, w)) {
    if (!(f == 7 && w == 2)) {  // ModelProto.graph
      model.skip(w);
      continue;
    }
    found_graph = true;
    std::set<std::string, std::less<>> initializers;
    std::vector<OnnxTensorInfo> inputs;
    ProtoReader graph(model.bytes());
    std::uint32_t gf, gw;
    while (graph.next(gf, gw)) {
      if (gf == 5 && gw == 2) {  // initializer: TensorProto, name is field 8
        ProtoReader t(graph.bytes());
        std::uint32_t tf, tw;
        while (t.next(tf, tw)) {
          if (tf == 8 && tw == 2)
            initializers.emplace(t.bytes());
          else
            t.skip(tw);
        }
      } else if (gf == 11 && gw == 2) {
        inputs.push_back(read_value_info(graph.bytes()));
      } else if (gf == 12 && gw == 2) {
        info.outputs.push_back(read_value_info(graph.bytes()));
      } else {
        graph.skip(gw);
      }
    }
    for (auto& in : inputs)
      if (!initializers.contains(in.name)) info.inputs.push_back(std::move(in));
  }
  if (!found_graph) throw ModelShapeError("ONNX model has no graph");
  return info;
}

std::unique_ptr<FeatureBackend> load_cnn_backend(const std::filesystem::path& model_file) {
  const std::string bytes = read_file(model_file.string());
  const OnnxModelInfo info = read_onnx_model_info(bytes);

  if (info.inputs.size() != 1 || info.outputs.size() != 1)
    throw ModelShapeError("model '" + model_file.string() + "' has " +
                          std::to_string(info.inputs.size()) + " inputs and " +
                          std::to_string(info.outputs.size()) +
                          " outputs, expected 1 and 1");

  const auto& in = info.inputs[0].dims;
  const bool input_ok = in.size() == 4 && (in[1] == 3 || in[1] < 0) &&
                        in[2] == in[3] && (in[2] == 224 || in[2] == 256 || in[2] < 0);
  if (!input_ok)
    throw ModelShapeError("model input shape " + dims_to_string(in) +
                          ", expected [N,3,224,224] or [N,3,256,256]");
  const int input_size = in[2] == 224 ? 224 : kPatchSize;

  const auto& out = info.outputs[0].dims;
  std::int64_t width = 1;
  bool known = !out.empty();
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] < 0) known = false;
    else width *= out[i];
  }
  if (known && width != static_cast<std::int64_t>(kFeatureDim))
    throw ModelShapeError("model output shape " + dims_to_string(out) +
                          " has width " + std::to_string(width) + ", expected 512");

  cv::dnn::Net net;
  try {
    net = cv::dnn::readNetFromONNX(bytes.data(), bytes.size());
  } catch (const cv::Exception& e) {
    throw ModelShapeError("cannot import ONNX model '" + model_file.string() + "': " + e.what());
  }
  net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  auto backend = std::make_unique<CnnBackend>(std::move(net), input_size, model_file.string());
  // Probe once so width problems hidden behind symbolic dims surface at load.
  backend->embed(PatchPixels{});
  return backend;
}

}  // namespace msmil
