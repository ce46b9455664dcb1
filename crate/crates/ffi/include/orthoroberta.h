#ifndef ORTHOROBERTA_H
#define ORTHOROBERTA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Language codes used for input and output.
 */
typedef enum OrLanguage {
  OR_LANGUAGE_KURDISH = 0,
  OR_LANGUAGE_ARABIC = 1,
  OR_LANGUAGE_PERSIAN = 2,
  OR_LANGUAGE_URDU = 3,
} OrLanguage;

/*
 Result code of every fallible call.
 */
typedef enum OrStatus {
  OR_STATUS_OK = 0,
  OR_STATUS_NULL_ARGUMENT = 1,
  OR_STATUS_INVALID_UTF8 = 2,
  OR_STATUS_UNKNOWN_SCRIPT = 3,
  OR_STATUS_MISSING_CHECKPOINT = 4,
  OR_STATUS_BAD_CHECKPOINT = 5,
  OR_STATUS_BUFFER_TOO_SMALL = 6,
  OR_STATUS_INVALID_ARGUMENT = 7,
  /*
   A bug: the library panicked or hit a numerical failure.
   */
  OR_STATUS_INTERNAL = 8,
} OrStatus;

/*
 A loaded checkpoint. Opaque to C; free with [`or_model_free`].
 */
typedef struct OrModel OrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *or_version(void);

/*
 Message for the last failed call on this thread; empty after a success.
 Valid until the next call into the library from the same thread.
 */
const char *or_last_error(void);

/*
 Loads the checkpoint directory `dir` into `*out`.

 # Safety
 `dir` is a NUL-terminated string; `out` is writable.
 */
enum OrStatus or_model_load(const char *dir, struct OrModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` is null or came from [`or_model_load`] and was not freed before.
 */
void or_model_free(struct OrModel *model);

/*
 Number of classes of the head for `lang` (an [`OrLanguage`] value).

 # Safety
 `model` came from [`or_model_load`]; `out` is writable.
 */
enum OrStatus or_model_num_classes(const struct OrModel *model, int32_t lang, size_t *out);

/*
 Detects the language of `text`, normalizes it and classifies it with that
 language's head. Writes the class distribution into `probs`; when
 `probs_len` is too small, nothing is written there and `*probs_written`
 holds the length required.

 # Safety
 `model` came from [`or_model_load`]; `text` is NUL-terminated; `probs` is
 valid for `probs_len` doubles; the other outputs are writable or null.
 */
enum OrStatus or_model_classify(const struct OrModel *model,
                                const char *text,
                                enum OrLanguage *language,
                                size_t *class_index,
                                double *probs,
                                size_t probs_len,
                                size_t *probs_written);

/*
 Script-based language detection.

 # Safety
 `text` is NUL-terminated; outputs are writable or null.
 */
enum OrStatus or_detect(const char *text, enum OrLanguage *language, double *confidence);

/*
 Normalizes `text` for `lang` (an [`OrLanguage`] value).

 # Safety
 `text` is NUL-terminated; `buf` is null or valid for `buf_len` bytes;
 `needed` is writable or null.
 */
enum OrStatus or_normalize(const char *text,
                           int32_t lang,
                           char *buf,
                           size_t buf_len,
                           size_t *needed);

/*
 Replaces variant letters by seeded co-variants of the same class.

 # Safety
 As for [`or_normalize`].
 */
enum OrStatus or_transliterate(const char *text,
                               uint64_t seed,
                               char *buf,
                               size_t buf_len,
                               size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORTHOROBERTA_H */
