/**
 * Scripted exfiltration fixtures.
 *
 * A fixture site is a name plus a plan: a list of steps that each wait,
 * render a payload template against the device profile, optionally
 * obfuscate it, and send it to the first-party or third-party receiver.
 * The expected arrivals are derived from the plan alone, so a test can
 * know the ground truth without ever loading the page in a browser.
 */

import type { ProfileValue } from './profile.js';
import { valueText } from './profile.js';

export type HttpMethod = 'GET' | 'POST' | 'HEAD';
export type PayloadTransport = 'query' | 'body';
export type DestinationRole = 'first-party' | 'third-party';
export type Obfuscation = 'none' | 'percent' | 'base64';

export interface ExfilStep {
    delaySeconds: number;
    method: HttpMethod;
    transport: PayloadTransport;
    destination: DestinationRole;
    /** Payload with <attribute_id> placeholders for profile values. */
    template: string;
    obfuscation: Obfuscation;
}

export interface FixtureSpec {
    name: string;
    steps: ExfilStep[];
}

/** One request a fixture's plan is expected to land on a receiver. */
export interface ExpectedArrival {
    site: string;
    destination: DestinationRole;
    method: HttpMethod;
    transport: PayloadTransport;
    path: string;
    payload: string;
    delaySeconds: number;
    /** Attribute ids whose profile values the payload carries. */
    attributes: string[];
}

/** A plan step made concrete for one serving of the page. */
export interface PlanStep {
    delayMs: number;
    method: HttpMethod;
    transport: PayloadTransport;
    url: string;
    payload: string;
    obfuscation: Obfuscation;
}

export class FixtureError extends Error {}

export const RECEIVER_PATH = '/collect';

const NAME_RE = /^[a-z0-9][a-z0-9-]*$/;
const PLACEHOLDER_RE = /<([a-z][a-z0-9_]*)>/g;

const METHODS: readonly string[] = ['GET', 'POST', 'HEAD'];
const TRANSPORTS: readonly string[] = ['query', 'body'];
const DESTINATIONS: readonly string[] = ['first-party', 'third-party'];
const OBFUSCATIONS: readonly string[] = ['none', 'percent', 'base64'];

/** Attribute ids referenced by a template, in order, deduplicated. */
export function placeholderIds(template: string): string[] {
    const ids: string[] = [];
    for (const match of template.matchAll(PLACEHOLDER_RE)) {
        const id = match[1];
        if (id && !ids.includes(id)) {
            ids.push(id);
        }
    }
    return ids;
}

/**
 * Structural validation. Specs also arrive from JSON files, so the
 * union types are re-checked at runtime.
 */
export function validateFixtureSpec(spec: FixtureSpec): void {
    if (!NAME_RE.test(spec.name)) {
        throw new FixtureError(`fixture name ${JSON.stringify(spec.name)} must be lowercase alphanumerics and dashes`);
    }
    spec.steps.forEach((step, index) => {
        const where = `fixture ${spec.name} step ${index}`;
        if (!Number.isFinite(step.delaySeconds) || step.delaySeconds < 0) {
            throw new FixtureError(`${where}: delay must be a non-negative number`);
        }
        if (!METHODS.includes(step.method)) {
            throw new FixtureError(`${where}: unknown method ${JSON.stringify(step.method)}`);
        }
        if (!TRANSPORTS.includes(step.transport)) {
            throw new FixtureError(`${where}: unknown transport ${JSON.stringify(step.transport)}`);
        }
        if (!DESTINATIONS.includes(step.destination)) {
            throw new FixtureError(`${where}: unknown destination ${JSON.stringify(step.destination)}`);
        }
        if (!OBFUSCATIONS.includes(step.obfuscation)) {
            throw new FixtureError(`${where}: unknown obfuscation ${JSON.stringify(step.obfuscation)}`);
        }
        if (step.method !== 'POST' && step.transport === 'body') {
            // browsers silently drop GET/HEAD bodies, so such a plan could never run exactly
            throw new FixtureError(`${where}: ${step.method} cannot carry a body payload, use transport "query"`);
        }
    });
}

/** Fill a template's placeholders from the profile. */
export function renderTemplate(template: string, profile: Record<string, ProfileValue>): string {
    return template.replace(PLACEHOLDER_RE, (token, id: string) => {
        const value = profile[id];
        if (value === undefined) {
            throw new FixtureError(`template references ${token} but the profile has no value for it`);
        }
        return valueText(value);
    });
}

/**
 * Apply an obfuscation the way the page script does. Serialized into
 * fixture pages; must stay self-contained (see probe.ts header).
 */
export function encodePayload(payload: string, obfuscation: string): string {
    if (obfuscation === 'percent') {
        return encodeURIComponent(payload);
    }
    if (obfuscation === 'base64') {
        const bytes = new TextEncoder().encode(payload);
        let binary = '';
        for (let i = 0; i < bytes.length; i++) {
            binary += String.fromCharCode(bytes[i] as number);
        }
        return btoa(binary);
    }
    return payload;
}

/**
 * Execute a concrete plan. Serialized into fixture pages and also run
 * directly under node, so it uses only fetch/setTimeout globals. Steps
 * run strictly in order, each awaited, which is what makes receiver
 * logs deterministic. A refused connection does not stop the plan; the
 * blocking proxy is expected to kill some of these requests.
 */
export async function runPlan(steps: PlanStep[]): Promise<number> {
    let delivered = 0;
    for (const step of steps) {
        if (step.delayMs > 0) {
            await new Promise((resolve) => setTimeout(resolve, step.delayMs));
        }
        const payload = encodePayload(step.payload, step.obfuscation);
        let url = step.url;
        const init: { method: string; body?: string; headers?: Record<string, string> } = { method: step.method };
        if (step.transport === 'query') {
            url = url + '?' + payload;
        } else {
            init.body = payload;
            init.headers = { 'content-type': 'application/x-www-form-urlencoded' };
        }
        try {
            await fetch(url, init);
            delivered += 1;
        } catch (e) {
            // receiver unreachable or request blocked
        }
    }
    return delivered;
}

export interface ReceiverBases {
    firstParty: string;
    thirdParty: string;
}

/** Make a spec's plan concrete for one page serving. */
export function buildPagePlan(
    spec: FixtureSpec,
    profile: Record<string, ProfileValue>,
    bases: ReceiverBases,
): PlanStep[] {
    validateFixtureSpec(spec);
    return spec.steps.map((step) => ({
        delayMs: Math.round(step.delaySeconds * 1000),
        method: step.method,
        transport: step.transport,
        url: (step.destination === 'first-party' ? bases.firstParty : bases.thirdParty) + RECEIVER_PATH,
        payload: renderTemplate(step.template, profile),
        obfuscation: step.obfuscation,
    }));
}

/**
 * A query string as it leaves a fetch call: WHATWG URL serialization
 * percent-encodes what the query charset forbids (spaces and friends),
 * in node and in every browser alike. Expected arrivals must go
 * through the same normalization or they would disagree with the wire.
 */
export function canonicalizeQuery(query: string): string {
    return new URL('http://fixture.invalid/?' + query).search.slice(1);
}

/**
 * Derive what each receiver must log for a spec, without a browser.
 * The payload here is post-obfuscation, exactly as it travels.
 */
export function groundTruth(spec: FixtureSpec, profile: Record<string, ProfileValue>): ExpectedArrival[] {
    validateFixtureSpec(spec);
    return spec.steps.map((step) => {
        const encoded = encodePayload(renderTemplate(step.template, profile), step.obfuscation);
        return {
            site: spec.name,
            destination: step.destination,
            method: step.method,
            transport: step.transport,
            path: RECEIVER_PATH,
            payload: step.transport === 'query' ? canonicalizeQuery(encoded) : encoded,
            delaySeconds: step.delaySeconds,
            attributes: placeholderIds(step.template).sort(),
        };
    });
}

/**
 * A stand-in device profile for serving fixtures outside a real crawl.
 * The width 1280 keeps the 1280088.jpeg decoy an honest test of
 * resolution false positives.
 */
export const SAMPLE_PROFILE: Record<string, ProfileValue> = {
    resolution: '1280x1024',
    os: 'Linux',
    os_version: '6.8.0',
    user_agent: 'Mozilla/5.0 (X11; Linux x86_64; rv:126.0) Gecko/20100101 Firefox/126.0',
    browser_name: 'Firefox',
    browser_version: '126.0',
    webgl_renderer: 'ANGLE (NVIDIA GeForce GTX 1660 Direct3D11 vs_5_0 ps_5_0)',
    webgl_vendor: 'Google Inc. (NVIDIA)',
    webgl_version: 'WebGL 1.0 (OpenGL ES 2.0 Chromium)',
    gpu: 'NVIDIA GeForce GTX 1660',
    gpu_vendor: 'NVIDIA Corporation',
    installed_plugins: ['PDF Viewer', 'Chromium PDF Viewer'],
    language: 'en-GB',
    geolocation: [51.4167, -0.5667],
    city: 'Egham',
    ip_addresses: ['203.0.113.42'],
    charset: 'windows-1252',
};

const step = (
    delaySeconds: number,
    method: HttpMethod,
    transport: PayloadTransport,
    destination: DestinationRole,
    template: string,
    obfuscation: Obfuscation = 'none',
): ExfilStep => ({ delaySeconds, method, transport, destination, template, obfuscation });

/**
 * The bundled corpus. Every core attribute is exfiltrated by at least
 * one site, one site sends nothing (negative control) and one sends
 * only decoy strings that merely resemble attribute values.
 */
export function defaultFixtureSpecs(): FixtureSpec[] {
    return [
        { name: 'control-blank', steps: [] },
        {
            name: 'decoy-filenames',
            steps: [step(0, 'GET', 'query', 'third-party', 'name=1280088.jpeg&shot=9999x9999.png')],
        },
        {
            name: 'form-exfil',
            steps: [step(0, 'POST', 'body', 'first-party', 'sr=<resolution>&lang=<language>&cs=<charset>')],
        },
        {
            name: 'late-beacon',
            steps: [step(2.5, 'POST', 'body', 'third-party', 'sr=<resolution>')],
        },
        {
            name: 'ua-relay',
            steps: [
                step(0, 'POST', 'body', 'third-party',
                    '{"ua":"<user_agent>","browser":"<browser_name>","version":"<browser_version>"}'),
            ],
        },
        {
            name: 'webgl-mask',
            steps: [
                step(0, 'POST', 'body', 'third-party',
                    'glr=<webgl_renderer>&glv=<webgl_vendor>&glver=<webgl_version>', 'base64'),
            ],
        },
        {
            name: 'gpu-query',
            steps: [step(0, 'GET', 'query', 'third-party', 'gpu=<gpu>&vendor=<gpu_vendor>', 'percent')],
        },
        {
            name: 'head-probe',
            steps: [step(0, 'HEAD', 'query', 'third-party', 'os=<os>&osv=<os_version>')],
        },
        {
            name: 'geo-collector',
            steps: [step(0, 'POST', 'body', 'first-party', 'loc=<geolocation>&city=<city>')],
        },
        {
            name: 'plugin-census',
            steps: [step(0, 'POST', 'body', 'third-party', 'plugins=<installed_plugins>')],
        },
        {
            name: 'ip-leak',
            steps: [step(0, 'GET', 'query', 'third-party', 'addr=<ip_addresses>')],
        },
        {
            name: 'multi-stage',
            steps: [
                step(0, 'GET', 'query', 'third-party', 'sr=<resolution>'),
                step(0.2, 'POST', 'body', 'first-party', 'lang=<language>', 'base64'),
            ],
        },
    ];
}
