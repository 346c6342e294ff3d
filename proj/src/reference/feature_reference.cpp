#include "shmt/error.hpp"
#include "shmt/feature_extractor.hpp"

namespace shmt::reference {

metrics::Activation conv3x3_s2(const metrics::Activation& input, const metrics::ConvLayer& layer,
                               bool relu) {
  require(input.channels == layer.in, "conv channel mismatch");
  const int oh = (input.height + 1) / 2, ow = (input.width + 1) / 2;
  metrics::Activation out{layer.out, oh, ow, {}};
  out.values.resize(static_cast<std::size_t>(layer.out) * oh * ow);
  auto in_at = [&](int c, int y, int x) -> double {
    if (y < 0 || y >= input.height || x < 0 || x >= input.width) return 0.0;
    return input.values[(static_cast<std::size_t>(c) * input.height + y) * input.width + x];
  };
  for (int o = 0; o < layer.out; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = layer.bias[o];
        for (int c = 0; c < layer.in; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              acc += layer.weights[((static_cast<std::size_t>(o) * layer.in + c) * 3 + ky) * 3 + kx] *
                     in_at(c, 2 * y + ky - 1, 2 * x + kx - 1);
        if (relu && acc < 0.0) acc = 0.0;
        out.values[(static_cast<std::size_t>(o) * oh + y) * ow + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

metrics::Features random_conv_features(const metrics::RandomConvExtractor& extractor,
                                       const Image& rgb) {
  require_channels(rgb, 3, "random-conv input");
  metrics::Activation a{3, rgb.height(), rgb.width(), {}};
  for (float v : rgb.pixels()) a.values.push_back(v * 2.0f - 1.0f);
  const auto& layers = extractor.layers();
  for (std::size_t i = 0; i < layers.size(); ++i)
    a = conv3x3_s2(a, layers[i], i + 1 < layers.size());

  metrics::Features f;
  f.patches = a.height * a.width;
  f.key_dim = a.channels;
  f.cls.assign(f.key_dim, 0.0f);
  f.keys.resize(static_cast<std::size_t>(f.patches) * f.key_dim);
  for (int p = 0; p < f.patches; ++p) {
    for (int c = 0; c < a.channels; ++c) {
      const float v = a.values[static_cast<std::size_t>(c) * f.patches + p];
      f.keys[static_cast<std::size_t>(p) * f.key_dim + c] = v;
    }
  }
  for (int c = 0; c < a.channels; ++c) {
    double acc = 0.0;
    for (int p = 0; p < f.patches; ++p) acc += f.keys[static_cast<std::size_t>(p) * f.key_dim + c];
    f.cls[c] = static_cast<float>(acc / f.patches);
  }
  return f;
}

}  // namespace shmt::reference
