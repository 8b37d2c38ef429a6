/**
 * Local fixture cluster: one HTTP server per fixture site, a shared
 * third-party tracker, and a probe harness. Receivers append every
 * arrival to an in-memory JSON-lines log so tests and blocking-mode
 * verification can diff exactly what got through.
 *
 * First party and third party are told apart by hostname, not port:
 * pages live on pageHost and the tracker on trackerHost, both of which
 * must resolve to loopback so everything stays on this machine.
 */

import { createServer, type IncomingMessage, type Server, type ServerResponse } from 'node:http';
import { lookup } from 'node:dns/promises';
import type { AddressInfo } from 'node:net';

import {
    CORE_ATTRIBUTE_IDS,
    toProfileDocument,
    validateProfileDocument,
    type ProfileValue,
    type ValidatedProfile,
} from './profile.js';
import {
    buildPagePlan,
    encodePayload,
    runPlan,
    validateFixtureSpec,
    type FixtureSpec,
    type ReceiverBases,
} from './fixtures.js';
import { PROBE_PAGE_FUNCTIONS } from './probe.js';

export class FixtureServerError extends Error {}

export interface ReceiverEntry {
    seq: number;
    timestamp: string;
    remote_addr: string;
    host: string;
    method: string;
    path: string;
    query: string;
    body_b64: string;
    content_type: string | null;
}

/** Append-only arrival log, one JSON object per request. */
export class ReceiverLog {
    readonly name: string;
    private readonly rows: ReceiverEntry[] = [];

    constructor(name: string) {
        this.name = name;
    }

    append(entry: Omit<ReceiverEntry, 'seq' | 'timestamp'>): ReceiverEntry {
        const row: ReceiverEntry = {
            seq: this.rows.length + 1,
            timestamp: new Date().toISOString(),
            ...entry,
        };
        this.rows.push(row);
        return row;
    }

    entries(): ReceiverEntry[] {
        return this.rows.slice();
    }

    toJsonl(): string {
        return this.rows.map((row) => JSON.stringify(row)).join('\n') + (this.rows.length ? '\n' : '');
    }
}

/** Arrival rows with the only non-deterministic field removed. */
export function withoutTimestamps(entries: ReceiverEntry[]): Omit<ReceiverEntry, 'timestamp'>[] {
    return entries.map(({ timestamp, ...rest }) => rest);
}

const BODY_LIMIT = 1024 * 1024;

function readBody(req: IncomingMessage): Promise<Buffer> {
    return new Promise((resolve, reject) => {
        const chunks: Buffer[] = [];
        let size = 0;
        req.on('data', (chunk: Buffer) => {
            if (size < BODY_LIMIT) {
                chunks.push(chunk);
                size += chunk.length;
            }
        });
        req.on('end', () => resolve(Buffer.concat(chunks)));
        req.on('error', reject);
    });
}

function normalizeRemote(address: string | undefined): string {
    if (!address) {
        return '';
    }
    return address.startsWith('::ffff:') ? address.slice(7) : address;
}

function splitTarget(rawUrl: string | undefined): { path: string; query: string } {
    const raw = rawUrl || '/';
    const q = raw.indexOf('?');
    if (q < 0) {
        return { path: raw, query: '' };
    }
    return { path: raw.slice(0, q), query: raw.slice(q + 1) };
}

async function logArrival(log: ReceiverLog, req: IncomingMessage): Promise<ReceiverEntry> {
    const body = await readBody(req);
    const { path, query } = splitTarget(req.url);
    return log.append({
        remote_addr: normalizeRemote(req.socket.remoteAddress),
        host: req.headers.host || '',
        method: req.method || '',
        path,
        query,
        body_b64: body.toString('base64'),
        content_type: req.headers['content-type'] || null,
    });
}

function sendText(res: ServerResponse, status: number, text: string, contentType = 'text/plain; charset=utf-8'): void {
    res.writeHead(status, { 'content-type': contentType });
    res.end(text);
}

/** JSON.stringify hardened against </script> breaking out of the tag. */
function inlineJson(value: unknown): string {
    return JSON.stringify(value).replace(/</g, '\\u003c');
}

function functionSources(fns: readonly ((...args: never[]) => unknown)[]): string {
    return fns.map((fn) => fn.toString()).join('\n');
}

/**
 * The page a fixture site serves. Its script block re-declares the
 * plan runner and executes the already-rendered plan, so what the page
 * does is byte-for-byte what the tests executed against the cluster.
 */
export function fixturePageHtml(
    spec: FixtureSpec,
    profile: Record<string, ProfileValue>,
    bases: ReceiverBases,
): string {
    const plan = buildPagePlan(spec, profile, bases);
    return `<!DOCTYPE html>
<html>
<head><meta charset="utf-8"><title>fixture ${spec.name}</title></head>
<body>
<h1>fixture ${spec.name}</h1>
<script>
"use strict";
${functionSources([encodePayload, runPlan])}
var PLAN = ${inlineJson(plan)};
runPlan(PLAN).then(function (sent) {
    document.title = ${inlineJson(spec.name + ' sent ')} + sent;
});
</script>
</body>
</html>
`;
}

/**
 * The probe page. Collects the device profile and posts it to /probe
 * on its own origin; /whoami fills in the caller address.
 */
export function probePageHtml(): string {
    return `<!DOCTYPE html>
<html>
<head><meta charset="utf-8"><title>device probe</title></head>
<body>
<h1>device probe</h1>
<p id="state">collecting</p>
<script>
"use strict";
var CORE_ATTRIBUTE_IDS = ${inlineJson(CORE_ATTRIBUTE_IDS)};
${functionSources(PROBE_PAGE_FUNCTIONS)}
${toProfileDocument.toString()}
(function () {
    var state = document.getElementById('state');
    captureProfile(window).then(function (result) {
        return window.fetch('/probe', {
            method: 'POST',
            headers: { 'content-type': 'application/json' },
            body: JSON.stringify(toProfileDocument(result)),
        });
    }).then(function (res) {
        state.textContent = res && res.ok ? 'profile submitted' : 'profile rejected: ' + res.status;
    }, function (err) {
        state.textContent = 'probe failed: ' + err;
    });
})();
</script>
</body>
</html>
`;
}

export interface FixtureSiteHandle {
    name: string;
    url: string;
    log: ReceiverLog;
}

export interface FixtureClusterOptions {
    profile: Record<string, ProfileValue>;
    /** [harness, tracker, ...one per spec]; 0 or missing picks an ephemeral port. */
    ports?: number[];
    pageHost?: string;
    trackerHost?: string;
}

export class FixtureCluster {
    readonly harnessUrl: string;
    readonly trackerUrl: string;
    readonly sites: FixtureSiteHandle[];
    readonly trackerLog: ReceiverLog;
    readonly harnessLog: ReceiverLog;
    readonly probeSubmissions: ValidatedProfile[];
    private readonly servers: Server[];

    constructor(fields: {
        harnessUrl: string;
        trackerUrl: string;
        sites: FixtureSiteHandle[];
        trackerLog: ReceiverLog;
        harnessLog: ReceiverLog;
        probeSubmissions: ValidatedProfile[];
        servers: Server[];
    }) {
        this.harnessUrl = fields.harnessUrl;
        this.trackerUrl = fields.trackerUrl;
        this.sites = fields.sites;
        this.trackerLog = fields.trackerLog;
        this.harnessLog = fields.harnessLog;
        this.probeSubmissions = fields.probeSubmissions;
        this.servers = fields.servers;
    }

    site(name: string): FixtureSiteHandle {
        const handle = this.sites.find((s) => s.name === name);
        if (!handle) {
            throw new FixtureServerError(`no fixture site named ${JSON.stringify(name)}`);
        }
        return handle;
    }

    /** All receiver logs keyed for diffing two runs against each other. */
    receiverLogs(): Record<string, ReceiverEntry[]> {
        const logs: Record<string, ReceiverEntry[]> = {
            tracker: this.trackerLog.entries(),
            harness: this.harnessLog.entries(),
        };
        for (const site of this.sites) {
            logs['site:' + site.name] = site.log.entries();
        }
        return logs;
    }

    async close(): Promise<void> {
        await Promise.all(
            this.servers.map(
                (server) =>
                    new Promise<void>((resolve) => {
                        server.close(() => resolve());
                        server.closeAllConnections();
                    }),
            ),
        );
    }
}

async function assertLocalHostname(hostname: string): Promise<void> {
    let addresses;
    try {
        addresses = await lookup(hostname, { all: true });
    } catch (e) {
        throw new FixtureServerError(`hostname mapping missing for ${JSON.stringify(hostname)}`);
    }
    const local = addresses.some((a) => a.address.startsWith('127.') || a.address === '::1');
    if (!local) {
        throw new FixtureServerError(
            `hostname ${JSON.stringify(hostname)} resolves to ${addresses[0]?.address}, expected loopback`,
        );
    }
}

function listenOn(server: Server, port: number): Promise<number> {
    return new Promise((resolve, reject) => {
        const onError = (err: NodeJS.ErrnoException) => {
            server.removeListener('listening', onListening);
            if (err.code === 'EADDRINUSE') {
                reject(new FixtureServerError(`port ${port} already in use`));
            } else {
                reject(err);
            }
        };
        const onListening = () => {
            server.removeListener('error', onError);
            resolve((server.address() as AddressInfo).port);
        };
        server.once('error', onError);
        server.once('listening', onListening);
        server.listen(port, '127.0.0.1');
    });
}

const asyncHandler = (
    handler: (req: IncomingMessage, res: ServerResponse) => Promise<void>,
) => (req: IncomingMessage, res: ServerResponse) => {
    handler(req, res).catch(() => {
        if (!res.headersSent) {
            res.writeHead(500);
        }
        res.end();
    });
};

/**
 * Boot the cluster: a server per fixture spec, the shared tracker and
 * the probe harness. Receivers respond 204 after logging, mirroring a
 * tracker that acknowledges beacons.
 */
export async function serveFixtures(
    specs: FixtureSpec[],
    options: FixtureClusterOptions,
): Promise<FixtureCluster> {
    const pageHost = options.pageHost || '127.0.0.1';
    const trackerHost = options.trackerHost || 'localhost';
    const ports = options.ports || [];
    const seen = new Set<string>();
    for (const spec of specs) {
        validateFixtureSpec(spec);
        if (seen.has(spec.name)) {
            throw new FixtureServerError(`duplicate fixture name ${JSON.stringify(spec.name)}`);
        }
        seen.add(spec.name);
    }
    await assertLocalHostname(pageHost);
    await assertLocalHostname(trackerHost);

    const servers: Server[] = [];
    const probeSubmissions: ValidatedProfile[] = [];
    const harnessLog = new ReceiverLog('harness');
    const trackerLog = new ReceiverLog('tracker');

    const harness = createServer(
        asyncHandler(async (req, res) => {
            const { path } = splitTarget(req.url);
            if (path === '/' && (req.method === 'GET' || req.method === 'HEAD')) {
                sendText(res, 200, probePageHtml(), 'text/html; charset=utf-8');
            } else if (path === '/healthz') {
                sendText(res, 200, 'ok');
            } else if (path === '/whoami') {
                sendText(res, 200, JSON.stringify({ ip: normalizeRemote(req.socket.remoteAddress) }),
                    'application/json');
            } else if (path === '/probe' && req.method === 'POST') {
                const entry = await logArrival(harnessLog, req);
                let validated: ValidatedProfile;
                try {
                    validated = validateProfileDocument(JSON.parse(Buffer.from(entry.body_b64, 'base64').toString('utf-8')));
                } catch (err) {
                    sendText(res, 400, String(err instanceof Error ? err.message : err));
                    return;
                }
                probeSubmissions.push(validated);
                res.writeHead(204);
                res.end();
            } else {
                sendText(res, 404, 'not found');
            }
        }),
    );
    servers.push(harness);
    const harnessPort = await listenOn(harness, ports[0] ?? 0);

    // The tracker logs every arrival whatever the path; a tracker does
    // not get to complain about where beacons land.
    const tracker = createServer(
        asyncHandler(async (req, res) => {
            await logArrival(trackerLog, req);
            res.writeHead(204);
            res.end();
        }),
    );
    servers.push(tracker);
    const trackerPort = await listenOn(tracker, ports[1] ?? 0);
    const trackerUrl = `http://${trackerHost}:${trackerPort}`;

    const sites: FixtureSiteHandle[] = [];
    for (let i = 0; i < specs.length; i++) {
        const spec = specs[i] as FixtureSpec;
        const log = new ReceiverLog(spec.name);
        const handle: FixtureSiteHandle = { name: spec.name, url: '', log };
        const server = createServer(
            asyncHandler(async (req, res) => {
                const { path } = splitTarget(req.url);
                if (path === '/' && (req.method === 'GET' || req.method === 'HEAD')) {
                    const bases: ReceiverBases = { firstParty: handle.url, thirdParty: trackerUrl };
                    sendText(res, 200, fixturePageHtml(spec, options.profile, bases), 'text/html; charset=utf-8');
                } else if (path === '/collect') {
                    await logArrival(log, req);
                    res.writeHead(204);
                    res.end();
                } else {
                    sendText(res, 404, 'not found');
                }
            }),
        );
        servers.push(server);
        const port = await listenOn(server, ports[2 + i] ?? 0);
        handle.url = `http://${pageHost}:${port}`;
        sites.push(handle);
    }

    return new FixtureCluster({
        harnessUrl: `http://${pageHost}:${harnessPort}`,
        trackerUrl,
        sites,
        trackerLog,
        harnessLog,
        probeSubmissions,
        servers,
    });
}
