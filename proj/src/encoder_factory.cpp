#include "zerolight/clip_encoder.hpp"
#include "zerolight/encoder.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/stub_encoder.hpp"

namespace zerolight {

template <typename Scalar>
EncoderPtr<Scalar> make_encoder(const EncoderConfig& cfg) {
  if (cfg.kind == "stub") {
    StubEncoderConfig sc;
    sc.dim = cfg.stub_dim;
    sc.token_width = cfg.stub_token_width;
    sc.resolution = cfg.stub_resolution;
    sc.seed = cfg.stub_seed;
    return std::make_shared<const StubEncoder<Scalar>>(sc);
  }
  if (cfg.kind == "clip") {
    if (cfg.clip_weights.empty()) throw ConfigError("encoder: clip weights path not set");
    if (cfg.clip_vocab.empty()) throw ConfigError("encoder: clip vocabulary path not set");
    if (!std::filesystem::exists(cfg.clip_weights)) {
      throw ConfigError("encoder: weights file not found: " + cfg.clip_weights.string());
    }
    if (!std::filesystem::exists(cfg.clip_vocab)) {
      throw ConfigError("encoder: vocabulary file not found: " + cfg.clip_vocab.string());
    }
    auto tokenizer = std::make_shared<const ClipTokenizer>(cfg.clip_vocab);
    return std::make_shared<const ClipEncoder<Scalar>>(read_tensor_archive(cfg.clip_weights), tokenizer,
                                                       cfg.clip_vision_heads, cfg.clip_text_heads);
  }
  throw ConfigError("encoder: unknown kind '" + cfg.kind + "' (expected stub or clip)");
}

template EncoderPtr<float> make_encoder<float>(const EncoderConfig&);
template EncoderPtr<double> make_encoder<double>(const EncoderConfig&);

}  // namespace zerolight
