#include "stegosan/nn/architectures.hpp"

#include <string>

#include "stegosan/error.hpp"

namespace stegosan::nn {
namespace {

constexpr std::size_t kKernel = 5;
constexpr std::size_t kPad = 2;

void conv_stage(NetworkGraph& net, const std::string& prefix, std::size_t in_ch, std::size_t out_ch) {
  net.append(prefix + "_conv", make_conv(kKernel, in_ch, out_ch, 2, kPad));
  net.append(prefix + "_bn", make_batchnorm(out_ch));
  net.append(prefix + "_act", leaky_relu());
}

std::size_t conv_stack(NetworkGraph& net, const std::vector<std::size_t>& widths, std::size_t image_size) {
  std::size_t in_ch = 3, side = image_size;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    conv_stage(net, "conv" + std::to_string(i + 1), in_ch, widths[i]);
    in_ch = widths[i];
    side = (side + 2 * kPad - kKernel) / 2 + 1;
  }
  return side * side * in_ch;
}

}  // namespace

NetworkGraph build_encoder(std::size_t k_bits, std::size_t image_size) {
  NetworkGraph net;
  net.add_input("image", {image_size, image_size, 3});
  const std::size_t flat = conv_stack(net, {32, 64, 128, 256}, image_size);
  const std::string trunk = "conv4_act";
  std::vector<std::string> outputs;
  if (k_bits > 0) {
    net.add_node("fc0", make_fc(flat, k_bits), {trunk});
    net.add_node("fc0_sigmoid", sigmoid_activation(), {"fc0"});
    outputs.push_back("fc0_sigmoid");
  }
  net.add_node("mu", make_fc(flat, kLatentDim), {trunk});
  net.add_node("log_var", make_fc(flat, kLatentDim), {trunk});
  outputs.push_back("mu");
  outputs.push_back("log_var");
  net.set_outputs(outputs);
  return net;
}

NetworkGraph build_decoder(std::size_t code_dim) {
  if (code_dim == 0) throw ConfigError("decoder code dimension must be positive");
  NetworkGraph net;
  net.add_input("code", {code_dim});
  net.append("fc", make_fc(code_dim, 2048));
  net.append("reshape", Reshape{{4, 4, 128}});
  net.append("fc_act", leaky_relu());
  const std::size_t widths[] = {256, 128, 64};
  std::size_t in_ch = 128;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "deconv" + std::to_string(i + 1);
    net.append(p, make_tconv(kKernel, in_ch, widths[i], 2, kPad, 1));
    net.append(p + "_bn", make_batchnorm(widths[i]));
    net.append(p + "_act", leaky_relu());
    in_ch = widths[i];
  }
  net.append("deconv4", make_tconv(kKernel, in_ch, 3, 2, kPad, 1));
  net.append("image", tanh_activation());
  net.set_outputs({"image"});
  return net;
}

NetworkGraph build_vaegan_discriminator(std::size_t n_id, std::size_t n_ep, std::size_t image_size) {
  if (n_id < 2 || n_ep < 2) throw ConfigError("discriminator heads need at least two classes");
  NetworkGraph net;
  net.add_input("image", {image_size, image_size, 3});
  const std::size_t flat = conv_stack(net, {32, 64, 128, 256}, image_size);
  net.append("fc", make_fc(flat, 256));
  net.append("fc_act", leaky_relu());
  net.add_node("d0_fc", make_fc(256, 1), {"fc_act"});
  net.add_node("d0", sigmoid_activation(), {"d0_fc"});
  net.add_node("d1_fc", make_fc(256, n_id), {"fc_act"});
  net.add_node("d1", softmax_activation(), {"d1_fc"});
  net.add_node("d2_fc", make_fc(256, n_ep), {"fc_act"});
  net.add_node("d2", softmax_activation(), {"d2_fc"});
  net.set_outputs({"d0", "d1", "d2"});
  return net;
}

NetworkGraph build_check_discriminator(std::size_t n_classes, const CheckDiscriminatorConfig& cfg) {
  if (n_classes < 2) throw ConfigError("check discriminator needs at least two classes");
  if (cfg.conv_channels.empty() || cfg.hidden == 0) throw ConfigError("check discriminator config is empty");
  NetworkGraph net;
  net.add_input("image", {cfg.image_size, cfg.image_size, 3});
  const std::size_t flat = conv_stack(net, cfg.conv_channels, cfg.image_size);
  net.append("fc", make_fc(flat, cfg.hidden));
  net.append("fc_act", leaky_relu());
  net.append("head", make_fc(cfg.hidden, n_classes));
  net.append("probs", softmax_activation());
  net.set_outputs({"probs"});
  return net;
}

CheckDiscriminatorConfig full_scale_check_config() { return {{32, 64, 128, 256}, 256, 64}; }

}  // namespace stegosan::nn
