#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nas {

// Unsigned big integer, just enough for exact search-space sizes (products of
// small arities can exceed 10^45). Limbs are base 10^9, little-endian, which
// makes decimal printing trivial.
class BigUint {
public:
    BigUint() : limbs_{0} {}
    explicit BigUint(uint64_t v) {
        limbs_.clear();
        do {
            limbs_.push_back(static_cast<uint32_t>(v % kBase));
            v /= kBase;
        } while (v != 0);
    }

    BigUint& operator*=(uint64_t m) {
        if (m == 0 || is_zero()) {
            limbs_.assign(1, 0);
            return *this;
        }
        uint64_t carry = 0;
        for (auto& limb : limbs_) {
            uint64_t cur = static_cast<uint64_t>(limb) * m + carry;
            limb = static_cast<uint32_t>(cur % kBase);
            carry = cur / kBase;
        }
        while (carry != 0) {
            limbs_.push_back(static_cast<uint32_t>(carry % kBase));
            carry /= kBase;
        }
        return *this;
    }

    bool is_zero() const { return limbs_.size() == 1 && limbs_[0] == 0; }

    bool operator==(const BigUint& o) const { return limbs_ == o.limbs_; }
    bool operator==(uint64_t v) const { return *this == BigUint(v); }

    std::string str() const {
        std::string out = std::to_string(limbs_.back());
        for (size_t i = limbs_.size() - 1; i-- > 0;) {
            std::string part = std::to_string(limbs_[i]);
            out += std::string(9 - part.size(), '0') + part;
        }
        return out;
    }

    double to_double() const {
        double out = 0.0;
        for (size_t i = limbs_.size(); i-- > 0;) out = out * 1e9 + limbs_[i];
        return out;
    }

    // Exact value when it fits in 64 bits, otherwise UINT64_MAX.
    uint64_t to_u64_saturated() const {
        uint64_t out = 0;
        for (size_t i = limbs_.size(); i-- > 0;) {
            if (out > (UINT64_MAX - limbs_[i]) / kBase) return UINT64_MAX;
            out = out * kBase + limbs_[i];
        }
        return out;
    }

private:
    static constexpr uint64_t kBase = 1000000000;
    std::vector<uint32_t> limbs_;
};

}  // namespace nas
