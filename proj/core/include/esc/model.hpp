#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "esc/dictionary.hpp"
#include "esc/elr.hpp"
#include "esc/encoders.hpp"
#include "esc/fusion.hpp"

namespace esc {

struct ModelConfig {
  int items = 128;   // K, must match the dictionary
  int dim = 256;     // n, must match the dictionary
  int heads = 4;
  int classes = events::kDefaultClasses;
  double beta = 0.1;
  enc::EncoderConfig encoder;

  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct ModelOutput {
  enc::Pyramid image_pyramid, event_pyramid;
  ag::Var f_img;   // image context feature (RC query)
  ag::Var e_img;   // edge-encoded image feature, unified space
  ag::Var e_evt;   // edge-encoded event feature, unified space
  ag::Var logits_img, logits_evt;
  elr::EdgeDistribution p_img, p_evt;
  dict::KeyGrid k_img, k_evt;
  ag::Var g_img, g_evt;  // re-coded features
  fusion::ConfidenceMaps c_img, c_evt;
  ag::Var phi;
  fusion::UoOutput uo;
  ag::Var logits;  // {c, H, W}
};

struct LossBreakdown {
  ag::Var total, pred, edge;
  elr::EdgeDistribution prior;
};

// Encoders, resolver, edge encoders, modality heads, RC, UO and the
// segmentation head around a frozen edge dictionary.
class EscModel {
 public:
  EscModel(const ModelConfig& cfg, std::shared_ptr<const dict::EdgeDictionary> dictionary, std::uint64_t seed);
  EscModel(const EscModel&) = delete;
  EscModel& operator=(const EscModel&) = delete;
  EscModel(EscModel&&) = default;
  EscModel& operator=(EscModel&&) = default;

  // image {3, H, W}, voxels {B, H, W}; H and W multiples of encoder.input_multiple.
  [[nodiscard]] ModelOutput forward(const Tensor& image, const Tensor& voxels) const;
  // Reuses the key maps and confidence maps of `base` instead of recomputing
  // them, so the output is a smooth function of the parameters (finite-difference checks).
  [[nodiscard]] ModelOutput forward_frozen(const Tensor& image, const Tensor& voxels, const ModelOutput& base) const;
  // Prior from the mask's boundary, L_edge and the total objective.
  [[nodiscard]] LossBreakdown loss(const ModelOutput& out, const events::SemanticMask& mask, double beta) const;
  [[nodiscard]] LossBreakdown loss(const ModelOutput& out, const events::SemanticMask& mask, double beta,
                                   const elr::EdgeDistribution& prior) const;
  // Labels 1..c at out_h x out_w: forward at the input's size, resize logits, argmax.
  [[nodiscard]] std::vector<std::uint8_t> predict(const Tensor& image, const Tensor& voxels, int out_h, int out_w) const;

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] nn::ParameterSet& params() noexcept { return params_; }
  [[nodiscard]] const nn::ParameterSet& params() const noexcept { return params_; }
  [[nodiscard]] const dict::EdgeDictionary& dictionary() const noexcept { return *dict_; }
  [[nodiscard]] const fusion::RecodedConsolidation& rc() const noexcept { return rc_; }
  [[nodiscard]] const fusion::UncertaintyOptimization& uo() const noexcept { return uo_; }
  [[nodiscard]] const fusion::PredictionHead& head() const noexcept { return head_; }

 private:
  [[nodiscard]] ModelOutput run(const Tensor& image, const Tensor& voxels, const ModelOutput* frozen) const;
  ModelConfig cfg_;
  std::uint64_t seed_;
  std::shared_ptr<const dict::EdgeDictionary> dict_;
  nn::ParameterSet params_;
  enc::ImageEncoder image_encoder_;
  enc::EventEncoder event_encoder_;
  enc::EdgeResolver resolver_;
  enc::EdgeEncoder edge_img_, edge_evt_;
  elr::ModalityHead head_img_, head_evt_;
  fusion::RecodedConsolidation rc_;
  fusion::UncertaintyOptimization uo_;
  fusion::PredictionHead head_;
};

// "ESCSEG1" container: every model parameter, the SHA-256 of the dictionary
// checkpoint it was trained against, the config echo and the seed. Optional
// extra tensors (optimizer state) and meta ride along.
struct SegCheckpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> extra;
};

inline constexpr const char* kSegMagic = "ESCSEG1";

void save_model(const std::filesystem::path& path, const EscModel& model, const std::string& dictionary_sha256,
                const SegCheckpoint& extra = {});

struct LoadedModel {
  EscModel model;
  SegCheckpoint extra;
  std::string dictionary_sha256;
};

// Rebuilds the model around `dictionary` (which must be frozen). Throws
// FormatError on a missing or mis-shaped tensor.
LoadedModel load_model(const std::filesystem::path& path, std::shared_ptr<const dict::EdgeDictionary> dictionary);

}  // namespace esc
