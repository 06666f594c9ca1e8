#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

#include "moext/tensor.hpp"

namespace moext {

// One RGB image as a 1 x 3 x H x W float tensor with values in [0, 1].
using ImageTensor = Tensor<float>;

inline constexpr int kImageSize = 224;

// 8-bit BGR/gray or float BGR (0..1) matrix to an RGB tensor.
ImageTensor to_tensor(const cv::Mat& image);
// RGB tensor to an 8-bit BGR matrix (rounded, clamped).
cv::Mat to_mat_u8(const ImageTensor& image);
// RGB tensor to a CV_32FC3 BGR matrix, values untouched.
cv::Mat to_mat_f32(const ImageTensor& image);

cv::Mat read_image(const std::filesystem::path& path);  // 8-bit BGR; throws IoError
void write_image(const cv::Mat& image, const std::filesystem::path& path);
ImageTensor load_image(const std::filesystem::path& path);
void save_image(const ImageTensor& image, const std::filesystem::path& path);

// Checks the preprocessed-image contract: 1 x 3 x 224 x 224, values in [0, 1].
bool is_valid_image(const ImageTensor& image, int size = kImageSize);

// Stacks single images into an n x 3 x H x W batch.
ImageTensor stack_images(const std::vector<const ImageTensor*>& images);

}  // namespace moext
