#include "btr/model/config.hpp"

#include "btr/common/error.hpp"

namespace btr::model {

std::string to_string(MaskMode m) { return m == MaskMode::causal ? "causal" : "fully_visible"; }

std::string to_string(Role r) {
  switch (r) {
    case Role::base_l2r: return "base_l2r";
    case Role::r2l: return "r2l";
    case Role::btr: return "btr";
    case Role::encoder_only: return "encoder_only";
  }
  return "?";
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "causal") return MaskMode::causal;
  if (s == "fully_visible") return MaskMode::fully_visible;
  throw ConfigError("decoder_mask_mode: unknown value '" + s + "'");
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::base_l2r, Role::r2l, Role::btr, Role::encoder_only})
    if (to_string(r) == s) return r;
  throw ConfigError("role: unknown value '" + s + "'");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  need(vocab_size > 0, "vocab_size must be positive");
  need(d_model > 0 && n_heads > 0, "d_model and n_heads must be positive");
  need(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                                   std::to_string(n_heads) + ")");
  need(n_layers >= 1, "n_layers must be at least 1");
  need(d_ff > 0, "d_ff must be positive");
  need(max_len >= 2, "max_len must be at least 2");
  need(init_std > 0.0, "init_std must be positive");
  if (role == Role::btr) need(decoder_mask_mode == MaskMode::fully_visible, "role btr requires decoder_mask_mode fully_visible");
  if (role == Role::base_l2r || role == Role::r2l) need(decoder_mask_mode == MaskMode::causal, "causal roles require decoder_mask_mode causal");
}

ModelConfig ModelConfig::with_role(Role r) const {
  ModelConfig c = *this;
  c.role = r;
  c.decoder_mask_mode = r == Role::btr ? MaskMode::fully_visible : MaskMode::causal;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"d_model", c.d_model},
       {"n_heads", c.n_heads},
       {"n_layers", c.n_layers},
       {"d_ff", c.d_ff},
       {"max_len", c.max_len},
       {"decoder_mask_mode", to_string(c.decoder_mask_mode)},
       {"role", to_string(c.role)},
       {"tie_embeddings", c.tie_embeddings},
       {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_len = j.value("max_len", c.max_len);
  if (j.contains("role")) c = c.with_role(parse_role(j.at("role").get<std::string>()));
  if (j.contains("decoder_mask_mode")) c.decoder_mask_mode = parse_mask_mode(j.at("decoder_mask_mode").get<std::string>());
  c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  c.init_std = j.value("init_std", c.init_std);
}

}  // namespace btr::model
