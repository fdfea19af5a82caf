#pragma once

#include <string>

#include "json.hpp"

namespace btr::model {

enum class MaskMode { causal, fully_visible };
enum class Role { base_l2r, r2l, btr, encoder_only };

std::string to_string(MaskMode m);
std::string to_string(Role r);
MaskMode parse_mask_mode(const std::string& s);
Role parse_role(const std::string& s);

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 32;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 64;
  int max_len = 64;
  MaskMode decoder_mask_mode = MaskMode::causal;
  Role role = Role::base_l2r;
  bool tie_embeddings = true;
  double init_std = 0.02;

  bool causal() const { return decoder_mask_mode == MaskMode::causal; }
  bool has_decoder() const { return role != Role::encoder_only; }

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Same architecture under another role; the mask mode follows the role.
  ModelConfig with_role(Role r) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing fields keep their defaults; the mask mode defaults from the role.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace btr::model
