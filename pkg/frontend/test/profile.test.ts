import { describe, expect, it } from 'vitest';

import {
    CORE_ATTRIBUTE_IDS,
    ProfileFormatError,
    toProfileDocument,
    validateProfileDocument,
    valueText,
    type ProbeResult,
} from '../src/profile.js';

describe('valueText', () => {
    it('passes strings through untouched', () => {
        expect(valueText('1280x1024')).toBe('1280x1024');
    });

    it('joins lists with commas', () => {
        expect(valueText(['PDF Viewer', 'Chromium PDF Viewer'])).toBe('PDF Viewer,Chromium PDF Viewer');
    });

    it('renders geolocation as lat,lon', () => {
        expect(valueText([51.4167, -0.5667])).toBe('51.4167,-0.5667');
    });
});

describe('toProfileDocument', () => {
    const result: ProbeResult = {
        values: {
            resolution: '1280x1024',
            language: 'en-GB',
            geolocation: [51.4167, -0.5667],
            installed_plugins: ['PDF Viewer'],
            colordepth: '24',
        },
        capturedAt: '2026-08-19T00:00:00.000Z',
        browserDescription: 'Firefox 126.0 on Linux',
    };

    it('writes explicit nulls for core attributes that were not measured', () => {
        const doc = toProfileDocument(result);
        expect(doc.captured_at).toBe('2026-08-19T00:00:00.000Z');
        expect(doc.resolution).toBe('1280x1024');
        expect(doc.city).toBeNull();
        expect(doc.user_agent).toBeNull();
        // every core id appears, measured or not
        for (const id of CORE_ATTRIBUTE_IDS) {
            expect(id in doc).toBe(true);
        }
    });

    it('keeps extra attributes beyond the core set', () => {
        const doc = toProfileDocument(result);
        expect(doc.colordepth).toBe('24');
    });

    it('survives a JSON round trip without changing', () => {
        const doc = toProfileDocument(result);
        expect(JSON.parse(JSON.stringify(doc))).toEqual(doc);
    });
});

describe('validateProfileDocument', () => {
    it('accepts a serialized probe result and reproduces every value', () => {
        const result: ProbeResult = {
            values: {
                resolution: '1280x1024',
                os: 'Linux',
                user_agent: 'Mozilla/5.0 (X11; Linux x86_64; rv:126.0) Gecko/20100101 Firefox/126.0',
                installed_plugins: ['PDF Viewer', 'Chromium PDF Viewer'],
                geolocation: [51.4167, -0.5667],
                language: 'en-GB',
                charset: 'windows-1252',
            },
            capturedAt: '2026-08-19T00:00:00.000Z',
            browserDescription: 'Firefox 126.0 on Linux',
        };
        const loaded = validateProfileDocument(toProfileDocument(result));
        expect(loaded.values).toEqual(result.values);
        expect(loaded.capturedAt).toBe(result.capturedAt);
    });

    it('treats null, empty string and empty list as absent', () => {
        const loaded = validateProfileDocument({
            resolution: '1280x1024',
            city: null,
            language: '',
            installed_plugins: [],
        });
        expect(Object.keys(loaded.values)).toEqual(['resolution']);
        expect(loaded.absentCoreIds).toContain('city');
        expect(loaded.absentCoreIds).toContain('language');
        expect(loaded.absentCoreIds).toContain('installed_plugins');
        expect(loaded.absentCoreIds).not.toContain('resolution');
    });

    it('lists every missing core id as absent', () => {
        const loaded = validateProfileDocument({});
        expect(loaded.absentCoreIds).toEqual([...CORE_ATTRIBUTE_IDS]);
    });

    it('accepts a "lat, lon" geolocation string', () => {
        const loaded = validateProfileDocument({ geolocation: '51.4167, -0.5667' });
        expect(loaded.values.geolocation).toEqual([51.4167, -0.5667]);
    });

    it('stringifies scalar numbers like the profile loader does', () => {
        const loaded = validateProfileDocument({ colordepth: 24 });
        expect(loaded.values.colordepth).toBe('24');
    });

    it('rejects a resolution that is not <digits>x<digits>', () => {
        expect(() => validateProfileDocument({ resolution: '1280 by 1024' })).toThrow(ProfileFormatError);
        expect(() => validateProfileDocument({ resolution: 1280 })).toThrow(/resolution/);
    });

    it('rejects out-of-range geolocation', () => {
        expect(() => validateProfileDocument({ geolocation: [99.0, 0.0] })).toThrow(/latitude/);
        expect(() => validateProfileDocument({ geolocation: [0.0, 181.0] })).toThrow(/longitude/);
        expect(() => validateProfileDocument({ geolocation: [1.0] })).toThrow(/two coordinates/);
        expect(() => validateProfileDocument({ geolocation: 'somewhere' })).toThrow(ProfileFormatError);
    });

    it('rejects documents that are not objects', () => {
        expect(() => validateProfileDocument([1, 2])).toThrow(/JSON object/);
        expect(() => validateProfileDocument('profile')).toThrow(/JSON object/);
        expect(() => validateProfileDocument(null)).toThrow(/JSON object/);
    });

    it('rejects unsupported value types', () => {
        expect(() => validateProfileDocument({ os: { name: 'Linux' } })).toThrow(/unsupported value type/);
    });
});
