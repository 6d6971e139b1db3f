#include "fsl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>

#include <fmt/format.h>

#include "fsl/errors.hpp"
#include "fsl/image.hpp"

namespace fs = std::filesystem;

namespace fsl {

bool is_image_file(const fs::path& path) {
  static constexpr std::array<const char*, 9> kExtensions = {".png", ".jpg", ".jpeg", ".bmp", ".pgm",
                                                             ".ppm", ".tif", ".tiff", ".webp"};
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::any_of(kExtensions.begin(), kExtensions.end(), [&](const char* e) { return ext == e; });
}

ImageFolderDataset ImageFolderDataset::scan(const fs::path& root) {
  if (!fs::is_directory(root)) throw LayoutError(fmt::format("dataset root {} is not a directory", root.string()));
  ImageFolderDataset ds{root, {}};
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    ClassFolder cls{entry.path().filename().string(), entry.path(), {}};
    for (const auto& f : fs::directory_iterator(entry.path())) {
      if (f.is_regular_file() && is_image_file(f.path())) cls.files.push_back(f.path());
    }
    std::sort(cls.files.begin(), cls.files.end());
    ds.classes.push_back(std::move(cls));
  }
  if (ds.classes.empty()) throw LayoutError(fmt::format("dataset root {} holds no class folders", root.string()));
  std::sort(ds.classes.begin(), ds.classes.end(),
            [](const ClassFolder& a, const ClassFolder& b) { return a.name < b.name; });
  for (const auto& cls : ds.classes) {
    if (cls.files.empty()) {
      throw LayoutError(fmt::format("class folder '{}' in {} holds no images", cls.name, root.string()));
    }
  }
  return ds;
}

const ClassFolder* ImageFolderDataset::find(const std::string& name) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), name,
                             [](const ClassFolder& c, const std::string& n) { return c.name < n; });
  return it != classes.end() && it->name == name ? &*it : nullptr;
}

std::size_t ImageFolderDataset::image_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.files.size();
  return n;
}

const Tensor& ImageStore::get(const fs::path& file) {
  const std::string key = file.string();
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, preprocess_file(file, image_size_)).first;
  return it->second;
}

Tensor ImageStore::batch(const std::vector<fs::path>& files) {
  if (files.empty()) throw ContractError("empty image batch");
  const std::size_t per = 3 * image_size_ * image_size_;
  Tensor out({files.size(), 3, image_size_, image_size_});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto src = get(files[i]).data();
    std::memcpy(dst.data() + i * per, src.data(), per * sizeof(float));
  }
  return out;
}

}  // namespace fsl
