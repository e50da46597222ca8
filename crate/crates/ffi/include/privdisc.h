#ifndef PRIVDISC_H
#define PRIVDISC_H

#pragma once

/* Generated by cbindgen from privdisc-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Mirrors the CLI exit-code contract, with FFI-specific
// additions for argument and buffer problems.
typedef enum PdsStatus {
  PDS_STATUS_OK = 0,
  PDS_STATUS_MALFORMED = 2,
  PDS_STATUS_NOT_AUTHORIZED = 3,
  PDS_STATUS_EXPIRED = 4,
  PDS_STATUS_CRYPTO_FAILURE = 5,
  PDS_STATUS_NULL_ARGUMENT = 6,
  // The caller's buffer is too small; the required size is in `*written`.
  PDS_STATUS_BUFFER_TOO_SMALL = 7,
} PdsStatus;

// Server-side broadcast state: rotating semi-static share plus the replay
// cache for the current broadcast.
typedef struct PdsAdvertiser PdsAdvertiser;

// An issued principal bundled with the deployment's master public key and
// trust anchors.
typedef struct PdsPrincipal PdsPrincipal;

// An identity provider: IBE root plus root signing material.
typedef struct PdsRoot PdsRoot;

// Create an identity provider with the given root name component.
//
// # Safety
// `name` must be a valid NUL-terminated string and `out` a valid pointer.
enum PdsStatus pds_root_new(const char *name, struct PdsRoot **out);

// # Safety
// `root` must be a pointer previously returned by [`pds_root_new`], not
// yet freed.
void pds_root_free(struct PdsRoot *root);

// Issue a principal for a full hierarchical name under this root. A fresh
// signing key pair is generated and kept inside the handle.
//
// # Safety
// `root` must be a live handle; `name` a valid NUL-terminated string;
// `out` a valid pointer.
enum PdsStatus pds_root_issue(const struct PdsRoot *root,
                              const char *name,
                              struct PdsPrincipal **out);

// # Safety
// `principal` must be a pointer previously returned by [`pds_root_issue`],
// not yet freed.
void pds_principal_free(struct PdsPrincipal *principal);

// Copy the principal's canonical name (no NUL terminator) into `buf`.
//
// # Safety
// `principal` must be a live handle; `buf`/`written` as documented.
enum PdsStatus pds_principal_name(const struct PdsPrincipal *principal,
                                  uint8_t *buf,
                                  uintptr_t cap,
                                  uintptr_t *written);

// Create server-side broadcast state.
struct PdsAdvertiser *pds_advertiser_new(void);

// # Safety
// `advertiser` must be a pointer previously returned by
// [`pds_advertiser_new`], not yet freed.
void pds_advertiser_free(struct PdsAdvertiser *advertiser);

// Build a fresh signed, prefix-encrypted advertisement for `server` under
// `policy` (comma-separated prefixes), rotating the semi-static state.
// The encoded broadcast lands in `buf`.
//
// # Safety
// All handles must be live; `policy` a valid NUL-terminated string;
// `buf`/`written` as documented.
enum PdsStatus pds_advertise(struct PdsAdvertiser *advertiser,
                             const struct PdsPrincipal *server,
                             const char *policy,
                             uint64_t ttl_seconds,
                             uint64_t now_unix,
                             uint8_t *buf,
                             uintptr_t cap,
                             uintptr_t *written);

// Process a received advertisement as `client`; on success the advertising
// server's canonical name lands in `buf`.
//
// # Safety
// `client` must be a live handle; `bytes` must point to `len` readable
// bytes; `buf`/`written` as documented.
enum PdsStatus pds_discover(const struct PdsPrincipal *client,
                            const uint8_t *bytes,
                            uintptr_t len,
                            uint64_t now_unix,
                            uint8_t *buf,
                            uintptr_t cap,
                            uintptr_t *written);

// One full 0-RTT exchange in process: `client` discovers from the encoded
// broadcast and connects with optional early data; `server` accepts. On
// success the shared 32-byte session key is written to `key_out`.
//
// # Safety
// All handles must be live and `advertiser` must hold the state for the
// given broadcast; byte arguments must point to readable memory of the
// stated lengths; `key_out` must have room for 32 bytes.
enum PdsStatus pds_connect_loopback(const struct PdsPrincipal *client,
                                    const struct PdsPrincipal *server,
                                    const struct PdsAdvertiser *advertiser,
                                    const uint8_t *broadcast_bytes,
                                    uintptr_t broadcast_len,
                                    const uint8_t *early_data,
                                    uintptr_t early_data_len,
                                    uint64_t now_unix,
                                    uint8_t *key_out);

// A static description of a status code.
const char *pds_status_message(enum PdsStatus status);

#endif  /* PRIVDISC_H */
