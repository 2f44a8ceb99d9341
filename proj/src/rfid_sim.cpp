#include "rfidb2b/rfid_sim.hpp"

#include <algorithm>

#include "rfidb2b/error.hpp"
#include "rfidb2b/modbus_rtu.hpp"

namespace rfidb2b::rfid {

SimTag& TagWorld::create_tag(std::uint64_t uid, std::size_t capacity, std::size_t block_size) {
  if (uid == 0) throw Error(Errc::RangeError, "UID 0 is reserved");
  if (tags_.count(uid)) throw Error(Errc::DuplicateUid, "UID " + std::to_string(uid) + " already exists");
  if (capacity < tag::kHeaderSize) throw Error(Errc::RangeError, "capacity smaller than the tag header");
  SimTag t{tag::TagImage::blank(uid, capacity, block_size), {}};
  t.protected_blocks.assign(t.image.block_count(), false);
  return tags_.emplace(uid, std::move(t)).first->second;
}

SimTag& TagWorld::tag(std::uint64_t uid) {
  auto it = tags_.find(uid);
  if (it == tags_.end()) throw Error(Errc::TagNotInField, "no tag with UID " + std::to_string(uid));
  return it->second;
}

const SimTag& TagWorld::tag(std::uint64_t uid) const {
  auto it = tags_.find(uid);
  if (it == tags_.end()) throw Error(Errc::TagNotInField, "no tag with UID " + std::to_string(uid));
  return it->second;
}

void TagWorld::commission(const tag::TagImage& image) {
  SimTag& t = tag(image.uid);
  if (image.block_size != t.image.block_size || image.data.size() > t.image.data.size())
    throw Error(Errc::RangeError, "image does not fit tag " + std::to_string(image.uid));
  std::copy(image.data.begin(), image.data.end(), t.image.data.begin());
}

void ReaderField::enter(std::uint64_t uid) {
  world_->tag(uid);
  present_.insert(uid);
}

void ReaderField::leave(std::uint64_t uid) { present_.erase(uid); }

const SimTag& ReaderField::present_tag(std::uint64_t uid) const {
  if (!present(uid)) throw Error(Errc::TagNotInField, "tag " + std::to_string(uid) + " not in field of " + reader_id_);
  return world_->tag(uid);
}

std::size_t ReaderField::block_size(std::uint64_t uid) const { return present_tag(uid).image.block_size; }

Bytes ReaderField::read_blocks(std::uint64_t uid, std::size_t start, std::size_t count) const {
  const SimTag& t = present_tag(uid);
  const std::size_t blocks = t.image.block_count();
  if (start >= blocks || count > blocks - start)
    throw Error(Errc::RangeError, "blocks " + std::to_string(start) + "+" + std::to_string(count) +
                                      " outside a " + std::to_string(blocks) + "-block tag");
  const std::size_t bs = t.image.block_size;
  return Bytes(t.image.data.begin() + start * bs, t.image.data.begin() + (start + count) * bs);
}

void ReaderField::write_blocks(std::uint64_t uid, std::size_t start, ByteView data) {
  present_tag(uid);
  SimTag& t = world_->tag(uid);
  const std::size_t bs = t.image.block_size;
  const std::size_t blocks = t.image.block_count();
  if (data.empty() || data.size() % bs != 0)
    throw Error(Errc::RangeError, "write length must be a positive multiple of the block size");
  const std::size_t count = data.size() / bs;
  if (start >= blocks || count > blocks - start) throw Error(Errc::RangeError, "write outside tag memory");
  for (std::size_t b = start; b < start + count; ++b) {
    if (t.protected_blocks[b]) throw Error(Errc::WriteProtected, "block " + std::to_string(b) + " is write-protected");
  }
  std::copy(data.begin(), data.end(), t.image.data.begin() + start * bs);
}

void ReaderField::set_protected(std::uint64_t uid, std::size_t block, bool on) {
  SimTag& t = world_->tag(uid);
  if (block >= t.protected_blocks.size()) throw Error(Errc::RangeError, "block outside tag memory");
  t.protected_blocks[block] = on;
}

namespace reader {

Bytes encode_reader_frame(std::uint8_t cmd, ByteView payload) {
  const std::size_t len = payload.size() + 1;
  if (len > kMaxLength) throw Error(Errc::FrameTooLong, "reader frame longer than 250 bytes");
  Bytes wire;
  wire.reserve(len + 4);
  wire.push_back(kSof);
  wire.push_back(static_cast<std::uint8_t>(len));
  wire.push_back(cmd);
  wire.insert(wire.end(), payload.begin(), payload.end());
  const std::uint16_t crc = modbus::crc16(ByteView(wire).subspan(1));
  wire.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  wire.push_back(static_cast<std::uint8_t>(crc >> 8));
  return wire;
}

std::optional<ReaderFrame> decode_reader_frame(ByteView wire) {
  if (wire.size() < 5 || wire[0] != kSof) return std::nullopt;
  const std::size_t len = wire[1];
  if (len == 0 || len > kMaxLength || wire.size() != len + 4) return std::nullopt;
  const std::uint16_t crc = modbus::crc16(wire.subspan(1, len + 1));
  if ((crc & 0xFF) != wire[len + 2] || (crc >> 8) != wire[len + 3]) return std::nullopt;
  return ReaderFrame{wire[2], Bytes(wire.begin() + 3, wire.begin() + 2 + len)};
}

namespace {

Bytes status_frame(std::uint8_t cmd, std::uint8_t code) {
  const std::uint8_t payload[] = {code};
  return encode_reader_frame(static_cast<std::uint8_t>(cmd | 0x80), payload);
}

std::uint8_t status_for(Errc code) {
  switch (code) {
    case Errc::TagNotInField: return kStatusTagAbsent;
    case Errc::WriteProtected: return kStatusProtected;
    default: return kStatusRange;
  }
}

}  // namespace

Bytes handle_reader_frame(ReaderField& field, ByteView wire) {
  const auto frame = decode_reader_frame(wire);
  if (!frame) return {};
  const Bytes& p = frame->payload;
  try {
    switch (frame->cmd) {
      case kCmdInventory: {
        if (!p.empty()) return status_frame(frame->cmd, kStatusBadCommand);
        const auto uids = field.inventory();
        const std::size_t n = std::min(uids.size(), kMaxInventoryUids);
        Bytes out;
        out.push_back(static_cast<std::uint8_t>(n));
        for (std::size_t i = 0; i < n; ++i) append_be64(out, uids[i]);
        return encode_reader_frame(kCmdInventory, out);
      }
      case kCmdRead: {
        if (p.size() != 10) return status_frame(frame->cmd, kStatusBadCommand);
        const std::uint64_t uid = get_be64(&p[0]);
        const std::size_t start = p[8];
        const std::size_t count = p[9];
        if (!field.present(uid)) return status_frame(frame->cmd, kStatusTagAbsent);
        if (count == 0 || count * field.block_size(uid) > kMaxLength - 1)
          return status_frame(frame->cmd, kStatusRange);
        return encode_reader_frame(kCmdRead, field.read_blocks(uid, start, count));
      }
      case kCmdWrite: {
        if (p.size() < 10) return status_frame(frame->cmd, kStatusBadCommand);
        const std::uint64_t uid = get_be64(&p[0]);
        const std::size_t start = p[8];
        field.write_blocks(uid, start, ByteView(p).subspan(9));
        const std::uint8_t ok[] = {0x00};
        return encode_reader_frame(kCmdWrite, ok);
      }
      default:
        return status_frame(frame->cmd, kStatusBadCommand);
    }
  } catch (const Error& e) {
    return status_frame(frame->cmd, status_for(e.code()));
  }
}

void ReaderDevice::service(SerialLine& line) {
  while (!line.to_device.empty()) {
    Bytes rx = std::move(line.to_device.front());
    line.to_device.pop_front();
    Bytes tx = handle_reader_frame(*field_, rx);
    if (!tx.empty()) line.to_host.push_back(std::move(tx));
  }
}

ReaderFrame ReaderClient::exchange(std::uint8_t cmd, const Bytes& payload) {
  line_.to_device.push_back(encode_reader_frame(cmd, payload));
  device_->service(line_);
  if (line_.to_host.empty()) throw Error(Errc::Timeout, "reader did not answer");
  Bytes rx = std::move(line_.to_host.front());
  line_.to_host.pop_front();
  auto frame = decode_reader_frame(rx);
  if (!frame) throw Error(Errc::CrcMismatch, "corrupted reader response");
  if (frame->cmd == (cmd | 0x80)) {
    const std::uint8_t code = frame->payload.empty() ? kStatusBadCommand : frame->payload[0];
    switch (code) {
      case kStatusTagAbsent: throw Error(Errc::TagNotInField, "reader: tag absent");
      case kStatusRange: throw Error(Errc::RangeError, "reader: range error");
      case kStatusProtected: throw Error(Errc::WriteProtected, "reader: write-protected");
      default: throw Error(Errc::DeviceException, "reader: bad command");
    }
  }
  if (frame->cmd != cmd) throw Error(Errc::DeviceException, "reader answered a different command");
  return *frame;
}

std::vector<std::uint64_t> ReaderClient::inventory() {
  const ReaderFrame f = exchange(kCmdInventory, {});
  if (f.payload.empty() || f.payload.size() != 1u + f.payload[0] * 8u)
    throw Error(Errc::DeviceException, "malformed inventory response");
  std::vector<std::uint64_t> uids(f.payload[0]);
  for (std::size_t i = 0; i < uids.size(); ++i) uids[i] = get_be64(&f.payload[1 + 8 * i]);
  return uids;
}

Bytes ReaderClient::read_blocks(std::uint64_t uid, std::size_t start, std::size_t count, std::size_t block_size) {
  const std::size_t per_frame = (kMaxLength - 1) / block_size;
  Bytes out;
  while (count > 0) {
    const std::size_t n = std::min(count, per_frame);
    if (start > 0xFF) throw Error(Errc::RangeError, "block index beyond protocol range");
    Bytes req;
    append_be64(req, uid);
    req.push_back(static_cast<std::uint8_t>(start));
    req.push_back(static_cast<std::uint8_t>(n));
    const ReaderFrame f = exchange(kCmdRead, req);
    if (f.payload.size() != n * block_size) throw Error(Errc::DeviceException, "short read response");
    out.insert(out.end(), f.payload.begin(), f.payload.end());
    start += n;
    count -= n;
  }
  return out;
}

void ReaderClient::write_blocks(std::uint64_t uid, std::size_t start, ByteView data, std::size_t block_size) {
  const std::size_t per_frame = (kMaxLength - 10) / block_size * block_size;
  std::size_t done = 0;
  do {
    const std::size_t n = std::min(data.size() - done, per_frame);
    const std::size_t block = start + done / block_size;
    if (block > 0xFF) throw Error(Errc::RangeError, "block index beyond protocol range");
    Bytes req;
    append_be64(req, uid);
    req.push_back(static_cast<std::uint8_t>(block));
    req.insert(req.end(), data.begin() + done, data.begin() + done + n);
    exchange(kCmdWrite, req);
    done += n;
  } while (done < data.size());
}

}  // namespace reader
}  // namespace rfidb2b::rfid
