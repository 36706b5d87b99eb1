/*
 * Preload shim that pins threads in creation order.
 *
 * Interposes pthread_create. Configuration comes from the environment,
 * read on the first intercepted call:
 *
 *   NODEPERF_PIN_CPUS   comma-separated OS CPU ids; entry 0 belongs to the
 *                       main thread, created threads use entries 1, 2, ...
 *                       and wrap around to entry 0 when the list runs out
 *   NODEPERF_PIN_SKIP   hex mask over creation indices; set bits are not
 *                       pinned (management threads)
 *   NODEPERF_PIN_LOG    optional file receiving one line per decision:
 *                       "<index> pinned <position> <cpu> [wrap]" or
 *                       "<index> skipped"
 *
 * The decision is taken in the creating thread under a lock, so indices
 * follow creation order; the new thread applies its own affinity before
 * running user code.
 */
#define _GNU_SOURCE
#include <dlfcn.h>
#include <errno.h>
#include <pthread.h>
#include <sched.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef int (*create_fn)(pthread_t *, const pthread_attr_t *, void *(*)(void *), void *);

static pthread_mutex_t shim_lock = PTHREAD_MUTEX_INITIALIZER;
static int shim_ready;
static int *shim_cpus;
static long shim_ncpus;
static char *shim_mask; /* hex digits, most significant first, no prefix */
static long shim_created;
static long shim_pinned;
static FILE *shim_log;

struct trampoline {
    void *(*fn)(void *);
    void *arg;
    int cpu;
};

static void shim_init(void)
{
    const char *cpus = getenv("NODEPERF_PIN_CPUS");
    const char *mask = getenv("NODEPERF_PIN_SKIP");
    const char *log = getenv("NODEPERF_PIN_LOG");

    shim_ready = 1;
    if (cpus && *cpus) {
        long cap = 1;
        for (const char *p = cpus; *p; p++)
            if (*p == ',')
                cap++;
        shim_cpus = calloc(cap, sizeof(int));
        char *copy = strdup(cpus), *save = NULL;
        for (char *tok = strtok_r(copy, ",", &save); tok && shim_cpus; tok = strtok_r(NULL, ",", &save))
            shim_cpus[shim_ncpus++] = atoi(tok);
        free(copy);
    }
    if (mask) {
        if (mask[0] == '0' && (mask[1] == 'x' || mask[1] == 'X'))
            mask += 2;
        shim_mask = strdup(mask);
    }
    if (log && *log)
        shim_log = fopen(log, "a");
    if (shim_log)
        setvbuf(shim_log, NULL, _IOLBF, 0);
}

static int mask_bit(long index)
{
    if (!shim_mask)
        return 0;
    long len = (long)strlen(shim_mask);
    long digit = len - 1 - index / 4;
    if (digit < 0)
        return 0;
    char c = shim_mask[digit];
    int v = (c >= '0' && c <= '9') ? c - '0'
          : (c >= 'a' && c <= 'f') ? c - 'a' + 10
          : (c >= 'A' && c <= 'F') ? c - 'A' + 10 : 0;
    return (v >> (index % 4)) & 1;
}

static void *shim_start(void *p)
{
    struct trampoline t = *(struct trampoline *)p;
    free(p);
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(t.cpu, &set);
    if (sched_setaffinity(0, sizeof(set), &set) != 0)
        fprintf(stderr, "nodeperf pin: cannot pin thread to CPU %d: %s\n", t.cpu, strerror(errno));
    return t.fn(t.arg);
}

int pthread_create(pthread_t *thread, const pthread_attr_t *attr,
                   void *(*start_routine)(void *), void *arg)
{
    static create_fn real_create;
    if (!real_create)
        real_create = (create_fn)dlsym(RTLD_NEXT, "pthread_create");
    if (!real_create)
        return EAGAIN;

    pthread_mutex_lock(&shim_lock);
    if (!shim_ready)
        shim_init();
    long index = shim_created++;
    int cpu = -1;
    if (shim_ncpus > 0) {
        if (mask_bit(index)) {
            if (shim_log)
                fprintf(shim_log, "%ld skipped\n", index);
        } else {
            long slot = 1 + shim_pinned++;
            int wrapped = slot >= shim_ncpus;
            long pos = slot % shim_ncpus;
            cpu = shim_cpus[pos];
            if (shim_log)
                fprintf(shim_log, "%ld pinned %ld %d%s\n", index, pos, cpu, wrapped ? " wrap" : "");
            if (wrapped)
                fprintf(stderr, "nodeperf pin: warning: thread %ld wraps around the CPU list (CPU %d)\n",
                        index, cpu);
        }
    }
    pthread_mutex_unlock(&shim_lock);

    if (cpu < 0)
        return real_create(thread, attr, start_routine, arg);
    struct trampoline *t = malloc(sizeof *t);
    if (!t)
        return EAGAIN;
    t->fn = start_routine;
    t->arg = arg;
    t->cpu = cpu;
    int rc = real_create(thread, attr, shim_start, t);
    if (rc != 0)
        free(t);
    return rc;
}
