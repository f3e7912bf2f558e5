// Writes the slide rasters used by the CLI tests into a directory.
#include <filesystem>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <random>

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_test_slides DIR\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  cv::imwrite((dir / "white.png").string(), cv::Mat(1100, 1100, CV_8UC3, cv::Scalar(255, 255, 255)));
  cv::imwrite((dir / "black.png").string(), cv::Mat(1100, 1100, CV_8UC3, cv::Scalar(0, 0, 0)));
  std::mt19937 gen(7);
  const char* names[] = {"fn0", "fn1", "fn2", "pc0", "pc1", "pc2"};
  for (int s = 0; s < 6; ++s) {
    cv::Mat img(1100, 1200, CV_8UC3);
    for (int y = 0; y < img.rows; ++y)
      for (int x = 0; x < img.cols; ++x) {
        auto& p = img.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) p[c] = static_cast<unsigned char>(gen() % 120);
        // PC slides carry a strong red channel (BGR order).
        if (s >= 3) p[2] = 220;
      }
    cv::imwrite((dir / (std::string(names[s]) + ".png")).string(), img);
  }
  return 0;
}
