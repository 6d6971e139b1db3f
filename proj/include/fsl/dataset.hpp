#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsl/tensor.hpp"

namespace fsl {

struct ClassFolder {
  std::string name;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;  // sorted
};

// Class-per-folder image tree. Classes and files are sorted by name so the
// enumeration order never depends on the filesystem.
struct ImageFolderDataset {
  std::filesystem::path root;
  std::vector<ClassFolder> classes;

  // LayoutError when the root is missing, holds no class folders, or a class
  // folder holds no images.
  static ImageFolderDataset scan(const std::filesystem::path& root);

  const ClassFolder* find(const std::string& name) const;
  std::size_t image_count() const;
};

bool is_image_file(const std::filesystem::path& path);

// Decodes and preprocesses on first use, then serves from memory.
class ImageStore {
 public:
  explicit ImageStore(std::size_t image_size) : image_size_(image_size) {}

  std::size_t image_size() const { return image_size_; }

  // [3 x S x S] in [0, 1].
  const Tensor& get(const std::filesystem::path& file);
  // [n x 3 x S x S]
  Tensor batch(const std::vector<std::filesystem::path>& files);

  std::size_t cached() const { return cache_.size(); }

 private:
  std::size_t image_size_;
  std::map<std::string, Tensor> cache_;
};

}  // namespace fsl
