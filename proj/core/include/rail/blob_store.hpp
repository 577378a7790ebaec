#pragma once

// Content-addressed key/value store for large binaries (CAD models, images,
// feature descriptors). Keys are SHA-256 digests of the content.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rail/object_store.hpp"

namespace rail::store {

class BlobBackend {
 public:
  virtual ~BlobBackend() = default;
  virtual bool contains(const std::string& hash) const = 0;
  virtual void write(const std::string& hash, const std::string& content) = 0;
  virtual std::optional<std::string> read(const std::string& hash) const = 0;
  virtual std::vector<std::string> list() const = 0;
};

class MemoryBlobBackend final : public BlobBackend {
 public:
  bool contains(const std::string& hash) const override;
  void write(const std::string& hash, const std::string& content) override;
  std::optional<std::string> read(const std::string& hash) const override;
  std::vector<std::string> list() const override;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::string> blobs_;
};

/// One file per blob under `root`, named by its digest. Writes go through a
/// temporary file and rename.
class DirectoryBlobBackend final : public BlobBackend {
 public:
  explicit DirectoryBlobBackend(std::filesystem::path root);

  bool contains(const std::string& hash) const override;
  void write(const std::string& hash, const std::string& content) override;
  std::optional<std::string> read(const std::string& hash) const override;
  std::vector<std::string> list() const override;

  std::filesystem::path path_for(const std::string& hash) const;

 private:
  std::filesystem::path root_;
};

class BlobStore {
 public:
  static constexpr std::uint64_t kDefaultMaxBytes = std::uint64_t{256} << 20;

  explicit BlobStore(std::unique_ptr<BlobBackend> backend = std::make_unique<MemoryBlobBackend>(),
                     std::uint64_t max_bytes = kDefaultMaxBytes);

  /// Stores `content` (dedup by digest) and returns its reference. The media
  /// type recorded on first insertion sticks. Throws TooLarge.
  BlobRef put_blob(const std::string& content, const std::string& media_type);
  /// Throws NotFound, or CorruptContent when the stored bytes no longer hash
  /// to ref.hash.
  std::string get_blob(const BlobRef& ref) const;
  std::string get_blob(const std::string& hash) const;

  std::optional<BlobRef> describe(const std::string& hash) const;
  /// All stored blobs sorted by hash.
  std::vector<BlobRef> manifest() const;
  std::size_t size() const;
  std::string digest() const;

 private:
  std::unique_ptr<BlobBackend> backend_;
  std::uint64_t max_bytes_;
  mutable std::mutex mutex_;
  std::map<std::string, BlobRef> refs_;
};

}  // namespace rail::store
