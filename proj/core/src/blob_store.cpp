#include "rail/blob_store.hpp"

#include <fstream>
#include <sstream>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::store {

namespace fs = std::filesystem;

bool MemoryBlobBackend::contains(const std::string& hash) const {
  std::lock_guard lock(mutex_);
  return blobs_.contains(hash);
}

void MemoryBlobBackend::write(const std::string& hash, const std::string& content) {
  std::lock_guard lock(mutex_);
  blobs_.try_emplace(hash, content);
}

std::optional<std::string> MemoryBlobBackend::read(const std::string& hash) const {
  std::lock_guard lock(mutex_);
  auto it = blobs_.find(hash);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> MemoryBlobBackend::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [h, _] : blobs_) out.push_back(h);
  return out;
}

DirectoryBlobBackend::DirectoryBlobBackend(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create blob directory " + root_.string());
}

fs::path DirectoryBlobBackend::path_for(const std::string& hash) const { return root_ / hash; }

bool DirectoryBlobBackend::contains(const std::string& hash) const {
  return fs::exists(path_for(hash));
}

void DirectoryBlobBackend::write(const std::string& hash, const std::string& content) {
  const auto target = path_for(hash);
  if (fs::exists(target)) return;
  const auto tmp = root_ / (hash + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "failed writing blob " + hash);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorCode::IoError, "failed committing blob " + hash + ": " + ec.message());
}

std::optional<std::string> DirectoryBlobBackend::read(const std::string& hash) const {
  std::ifstream in(path_for(hash), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::vector<std::string> DirectoryBlobBackend::list() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto name = entry.path().filename().string();
    if (name.size() == 64 && entry.is_regular_file()) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

BlobStore::BlobStore(std::unique_ptr<BlobBackend> backend, std::uint64_t max_bytes)
    : backend_(std::move(backend)), max_bytes_(max_bytes) {
  for (const auto& hash : backend_->list()) {
    if (auto content = backend_->read(hash)) {
      refs_.emplace(hash, BlobRef{hash, content->size(), "application/octet-stream"});
    }
  }
}

BlobRef BlobStore::put_blob(const std::string& content, const std::string& media_type) {
  if (content.size() > max_bytes_) {
    throw Error(ErrorCode::TooLarge, "blob of " + std::to_string(content.size()) +
                                         " bytes exceeds limit of " + std::to_string(max_bytes_));
  }
  const std::string hash = sha256_hex(content);
  std::lock_guard lock(mutex_);
  if (auto it = refs_.find(hash); it != refs_.end()) return it->second;
  backend_->write(hash, content);
  BlobRef ref{hash, content.size(), media_type};
  refs_.emplace(hash, ref);
  return ref;
}

std::string BlobStore::get_blob(const BlobRef& ref) const { return get_blob(ref.hash); }

std::string BlobStore::get_blob(const std::string& hash) const {
  auto content = backend_->read(hash);
  if (!content) throw Error(ErrorCode::NotFound, "blob not found: " + hash);
  if (sha256_hex(*content) != hash) {
    throw Error(ErrorCode::CorruptContent, "stored blob " + hash + " fails its digest check");
  }
  return std::move(*content);
}

std::optional<BlobRef> BlobStore::describe(const std::string& hash) const {
  std::lock_guard lock(mutex_);
  auto it = refs_.find(hash);
  if (it == refs_.end()) return std::nullopt;
  return it->second;
}

std::vector<BlobRef> BlobStore::manifest() const {
  std::lock_guard lock(mutex_);
  std::vector<BlobRef> out;
  for (const auto& [_, ref] : refs_) out.push_back(ref);
  return out;
}

std::size_t BlobStore::size() const {
  std::lock_guard lock(mutex_);
  return refs_.size();
}

std::string BlobStore::digest() const {
  return sha256_hex(nlohmann::json(manifest()).dump());
}

}  // namespace rail::store
