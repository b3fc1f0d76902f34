#include <fmt/format.h>

#include "kernels.hpp"
#include "recog/ops.hpp"

namespace recog {

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride) {
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (kernel == 0 || kernel > input) {
    throw DimensionError(fmt::format("conv2d: kernel {} larger than input {}", kernel, input));
  }
  return (input - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, c_in, h, w, c_out, k, stride, h_out, w_out;
  std::size_t patch() const { return c_in * k * k; }
  std::size_t positions() const { return h_out * w_out; }
};

// Unfolds one image [c_in x h x w] into columns [c_in*k*k x h_out*w_out].
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t p_count = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* dst = cols + ((c * g.k + ki) * g.k + kj) * p_count;
        for (std::size_t oi = 0; oi < g.h_out; ++oi) {
          const double* src = image + (c * g.h + oi * g.stride + ki) * g.w + kj;
          for (std::size_t oj = 0; oj < g.w_out; ++oj) dst[oi * g.w_out + oj] = src[oj * g.stride];
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t p_count = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* src = cols + ((c * g.k + ki) * g.k + kj) * p_count;
        for (std::size_t oi = 0; oi < g.h_out; ++oi) {
          double* dst = image + (c * g.h + oi * g.stride + ki) * g.w + kj;
          for (std::size_t oj = 0; oj < g.w_out; ++oj) dst[oj * g.stride] += src[oi * g.w_out + oj];
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw DimensionError("conv2d: input must be [C x H x W] or [B x C x H x W], got " +
                         shape_str(input.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: kernels must be [C_out x C_in x k x k], got " + shape_str(kernels.shape()));
  }
  ConvGeometry g{};
  g.batch = batched ? input.dim(0) : 1;
  g.c_in = input.dim(batched ? 1 : 0);
  g.h = input.dim(batched ? 2 : 1);
  g.w = input.dim(batched ? 3 : 2);
  g.c_out = kernels.dim(0);
  g.k = kernels.dim(2);
  g.stride = stride;
  if (kernels.dim(1) != g.c_in) {
    throw DimensionError(fmt::format("conv2d: kernels {} expect {} input channels, input is {}",
                                     shape_str(kernels.shape()), kernels.dim(1), shape_str(input.shape())));
  }
  if (g.k > g.h || g.k > g.w) {
    throw DimensionError(fmt::format("conv2d: kernel {} larger than input {}", shape_str(kernels.shape()),
                                     shape_str(input.shape())));
  }
  if (bias.defined() && bias.numel() != g.c_out) {
    throw DimensionError(fmt::format("conv2d: bias {} for {} output channels", shape_str(bias.shape()), g.c_out));
  }
  g.h_out = conv_output_size(g.h, g.k, stride);
  g.w_out = conv_output_size(g.w, g.k, stride);

  const std::size_t patch = g.patch(), positions = g.positions();
  const std::size_t in_size = g.c_in * g.h * g.w, out_size = g.c_out * positions;
  std::vector<double> out(g.batch * out_size);
  std::vector<double> cols(patch * positions);
  const double* kv = kernels.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input.data().data() + b * in_size, cols.data());
    for (std::size_t co = 0; co < g.c_out; ++co) {
      double* row = out.data() + b * out_size + co * positions;
      std::fill_n(row, positions, bias.defined() ? bias[co] : 0.0);
      for (std::size_t p = 0; p < patch; ++p) kernels::axpy(row, kv[co * patch + p], cols.data() + p * positions, positions);
    }
  }
  Shape shape = batched ? Shape{g.batch, g.c_out, g.h_out, g.w_out} : Shape{g.c_out, g.h_out, g.w_out};
  Tensor y(std::move(shape), std::move(out));

  if (needs_grad({&input, &kernels, &bias})) {
    record_op(y, [input, kernels, bias, y, g] {
      const std::size_t patch = g.patch(), positions = g.positions();
      const std::size_t in_size = g.c_in * g.h * g.w, out_size = g.c_out * positions;
      const double* grad_out = y.mutable_grad().data();
      const double* kv = kernels.data().data();
      std::vector<double> cols(patch * positions);
      std::vector<double> dk(kernels.requires_grad() ? kernels.numel() : 0, 0.0);
      std::vector<double> db(bias.defined() && bias.requires_grad() ? g.c_out : 0, 0.0);
      std::vector<double> dx(input.requires_grad() ? input.numel() : 0, 0.0);
      std::vector<double> dcols(input.requires_grad() ? patch * positions : 0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double* go = grad_out + b * out_size;
        if (!dk.empty()) {
          im2col(g, input.data().data() + b * in_size, cols.data());
          for (std::size_t co = 0; co < g.c_out; ++co)
            for (std::size_t p = 0; p < patch; ++p)
              dk[co * patch + p] += kernels::dot(go + co * positions, cols.data() + p * positions, positions);
        }
        if (!db.empty()) {
          for (std::size_t co = 0; co < g.c_out; ++co) db[co] += kernels::total(go + co * positions, positions);
        }
        if (!dx.empty()) {
          std::fill(dcols.begin(), dcols.end(), 0.0);
          for (std::size_t p = 0; p < patch; ++p)
            for (std::size_t co = 0; co < g.c_out; ++co)
              kernels::axpy(dcols.data() + p * positions, kv[co * patch + p], go + co * positions, positions);
          col2im_add(g, dcols.data(), dx.data() + b * in_size);
        }
      }
      if (!dk.empty()) accumulate_grad(kernels, dk);
      if (!db.empty()) accumulate_grad(bias, db);
      if (!dx.empty()) accumulate_grad(input, dx);
    });
  }
  return y;
}

}  // namespace recog
