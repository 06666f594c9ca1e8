#include "moext/image.hpp"

#include <cstring>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace moext {

ImageTensor to_tensor(const cv::Mat& image) {
  if (image.empty()) throw ShapeError("empty image");
  cv::Mat bgr;
  if (image.channels() == 1)
    cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
  else if (image.channels() == 4)
    cv::cvtColor(image, bgr, cv::COLOR_BGRA2BGR);
  else
    bgr = image;
  cv::Mat f;
  if (bgr.depth() == CV_8U)
    bgr.convertTo(f, CV_32F, 1.0 / 255.0);
  else if (bgr.depth() == CV_32F)
    f = bgr;
  else
    bgr.convertTo(f, CV_32F);
  ImageTensor out(1, 3, f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < f.cols; ++x) {
      out.at(0, 0, y, x) = row[x][2];
      out.at(0, 1, y, x) = row[x][1];
      out.at(0, 2, y, x) = row[x][0];
    }
  }
  return out;
}

cv::Mat to_mat_f32(const ImageTensor& image) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("expected 1x3xHxW image, got " + image.shape().str());
  cv::Mat out(image.h(), image.w(), CV_32FC3);
  for (int y = 0; y < image.h(); ++y) {
    auto* row = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.w(); ++x)
      row[x] = cv::Vec3f(image.at(0, 2, y, x), image.at(0, 1, y, x), image.at(0, 0, y, x));
  }
  return out;
}

cv::Mat to_mat_u8(const ImageTensor& image) {
  cv::Mat out;
  to_mat_f32(image).convertTo(out, CV_8U, 255.0);  // saturate_cast rounds and clamps
  return out;
}

cv::Mat read_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot read image " + path.string());
  return img;
}

void write_image(const cv::Mat& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw IoError("cannot write image " + path.string());
}

ImageTensor load_image(const std::filesystem::path& path) { return to_tensor(read_image(path)); }

void save_image(const ImageTensor& image, const std::filesystem::path& path) {
  write_image(to_mat_u8(image), path);
}

bool is_valid_image(const ImageTensor& image, int size) {
  if (!(image.shape() == Shape{1, 3, size, size})) return false;
  for (float v : image.vec())
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  return true;
}

ImageTensor stack_images(const std::vector<const ImageTensor*>& images) {
  if (images.empty()) throw ShapeError("stack of zero images");
  const Shape one = images.front()->shape();
  ImageTensor out(static_cast<int>(images.size()), one.c, one.h, one.w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i]->shape() == one)) throw ShapeError("stack: image shapes differ");
    std::memcpy(out.sample(static_cast<int>(i)).data(), images[i]->data(), one.numel() * sizeof(float));
  }
  return out;
}

}  // namespace moext
